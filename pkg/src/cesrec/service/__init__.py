from .app import ServiceRuntime, create_app, load_runtime
from .store import SessionNotFound, SessionStore

__all__ = ["ServiceRuntime", "create_app", "load_runtime", "SessionStore", "SessionNotFound"]
