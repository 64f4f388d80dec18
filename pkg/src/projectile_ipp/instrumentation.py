"""OpenTelemetry tracing setup for simulation runs."""

import os
from typing import Dict, Optional

from opentelemetry import trace as trace_api
from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk import trace as trace_sdk
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace.export import (
    BatchSpanProcessor,
    ConsoleSpanExporter,
    SimpleSpanProcessor,
)

from .settings import DEFAULT_OTLP_ENDPOINT, env_flag

_provider: Optional[trace_sdk.TracerProvider] = None


def setup_tracing(
    endpoint: Optional[str] = None,
    service_name: str = "projectile-ipp",
) -> bool:
    """
    Set up OpenTelemetry tracing for ensembles, moment runs and CLI commands.

    Tracing is opt-in through IPP_TRACING_ENABLED. The exporter is chosen by
    IPP_TRACING_EXPORTER: "otlp" (gRPC collector) or "console".

    Args:
        endpoint: OTLP endpoint (default: IPP_OTLP_ENDPOINT or http://localhost:4317)
        service_name: Name of the service for trace identification

    Returns:
        True if a tracer provider was installed

    Example:
        >>> setup_tracing()
        >>> # sde.run_ensemble spans are now exported
    """
    global _provider

    if not env_flag("IPP_TRACING_ENABLED"):
        return False
    if _provider is not None:
        return True

    if endpoint is None:
        endpoint = os.getenv("IPP_OTLP_ENDPOINT", DEFAULT_OTLP_ENDPOINT)
    exporter_kind = os.getenv("IPP_TRACING_EXPORTER", "otlp").lower()

    try:
        resource = Resource(attributes={"service.name": service_name})
        provider = trace_sdk.TracerProvider(resource=resource)
        if exporter_kind == "console":
            provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))
        else:
            exporter = OTLPSpanExporter(endpoint=endpoint, insecure=True)
            provider.add_span_processor(BatchSpanProcessor(exporter))
        trace_api.set_tracer_provider(provider)
        _provider = provider
        target = "console" if exporter_kind == "console" else endpoint
        print(f"✓ Tracing enabled: {target}")
    except Exception as e:
        print(f"Warning: Failed to set up tracing: {e}")
        print("Continuing without tracing...")
        return False

    return True


def shutdown_tracing() -> None:
    """Flush and shut down the installed tracer provider, if any."""
    global _provider
    if _provider is not None:
        _provider.shutdown()
        _provider = None


def is_instrumented() -> bool:
    """
    Check if tracing is active.

    Returns:
        True if tracing is enabled and a provider was installed
    """
    return env_flag("IPP_TRACING_ENABLED") and _provider is not None


def get_tracer(name: str) -> trace_api.Tracer:
    """Tracer for a module; a no-op tracer when tracing is off."""
    return trace_api.get_tracer(name)


def stats_attributes(prefix: str, stats) -> Dict[str, float]:
    """
    Flatten ImpactStats into span attributes.

    Args:
        prefix: Attribute namespace, e.g. "impact" or "impact.controlled"
        stats: ImpactStats instance

    Returns:
        Dictionary suitable for span.set_attributes()
    """
    return {
        f"{prefix}.n": int(stats.n),
        f"{prefix}.mean_x": float(stats.mean_x),
        f"{prefix}.mean_y": float(stats.mean_y),
        f"{prefix}.sd_x": float(stats.sd_x),
        f"{prefix}.sd_y": float(stats.sd_y),
    }
