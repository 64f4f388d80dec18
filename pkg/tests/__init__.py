"""Tests for projectile_ipp."""
