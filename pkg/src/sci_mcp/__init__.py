"""Desk-scale MCP server framework with simulated research computing
backends, retrieval-based dynamic tool discovery, and a plan/resolve/execute
workflow engine."""

__version__ = "0.1.0"

from .errors import McpError, ToolFailure
from .protocol import (
    McpServer,
    PromptDescriptor,
    RequirementSet,
    ResourceDescriptor,
    RpcEnvelope,
    ServerIdentity,
    ToolDescriptor,
    ToolResult,
    decode_message,
    encode_message,
)
from .workflow import (
    AbstractPlan,
    AbstractTask,
    Binding,
    ConcretePlan,
    DeterministicPlanner,
    ExecutionOutput,
    RetryPolicy,
    SiteSpec,
    UserPromptSpec,
    execute,
    is_feasible,
    plan,
    resolve,
    run_workflow,
)

__all__ = [
    "__version__",
    "McpError",
    "ToolFailure",
    "McpServer",
    "PromptDescriptor",
    "RequirementSet",
    "ResourceDescriptor",
    "RpcEnvelope",
    "ServerIdentity",
    "ToolDescriptor",
    "ToolResult",
    "decode_message",
    "encode_message",
    "AbstractPlan",
    "AbstractTask",
    "Binding",
    "ConcretePlan",
    "DeterministicPlanner",
    "ExecutionOutput",
    "RetryPolicy",
    "SiteSpec",
    "UserPromptSpec",
    "execute",
    "is_feasible",
    "plan",
    "resolve",
    "run_workflow",
]
