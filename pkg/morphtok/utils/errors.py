"""
Errors Module
Single exception type with a stable, machine-parsable error code
"""

from __future__ import annotations


class MorphError(ValueError):
    """Raised for every recoverable failure inside morphtok"""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message or code.replace("_", " ").lower()
        super().__init__(f"{code}: {self.message}")

    def one_line(self) -> str:
        """Single line used by the CLI on stderr"""
        text = " ".join(self.message.split())
        return f"error={self.code} message={text}"
