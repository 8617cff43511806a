"""Simulated research-service backends and their MCP server bindings."""
