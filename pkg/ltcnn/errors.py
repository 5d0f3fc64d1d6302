"""Exception hierarchy and error-message enhancement for the toolkit."""
import re
from typing import Optional, Tuple


class LtcnnError(Exception):
    """Base class for toolkit errors. `exit_code` is what the CLI returns."""

    exit_code = 2


class ShapeError(LtcnnError):
    """Operand or layer shapes do not agree."""


class ConfigError(LtcnnError):
    """Run configuration or environment settings are invalid."""


class DatasetError(LtcnnError):
    """Dataset directory, file or split cannot be used."""


class CheckpointError(LtcnnError):
    """Checkpoint file cannot be read."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, unreadable header or unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the payload the header promises."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor does not have the shape its spec implies."""


class DivergenceError(LtcnnError):
    """Training produced a non-finite loss."""

    exit_code = 3

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"divergence at epoch {epoch}, batch {batch}")


class ErrorEnhancer:
    """Enhances toolkit error messages with hints and suggestions."""

    ERROR_PATTERNS = {
        r"truncated payload": {
            "type": "checkpoint_truncated",
            "hint": "The checkpoint file is shorter than its header says.",
            "suggestions": [
                "The file was probably copied or written only partially",
                "Re-run training or copy the checkpoint again",
            ]
        },

        r"bad magic": {
            "type": "checkpoint_magic",
            "hint": "This file is not an LTCNNCP1 checkpoint.",
            "suggestions": [
                "Pass the checkpoint.ltcnn or best.ltcnn written by the train command",
                "Check that the path does not point at an image or curves.csv",
            ]
        },

        r"(?:invalid|unreadable) header": {
            "type": "checkpoint_header",
            "hint": "The checkpoint header is damaged or was edited by hand.",
            "suggestions": [
                "Re-run training or copy the checkpoint again",
                "Do not edit checkpoint files; change the run config instead",
            ]
        },

        r"unsupported format version (\d+)": {
            "type": "checkpoint_version",
            "hint": "Checkpoint format version {match} is not readable by this toolkit.",
            "suggestions": [
                "Upgrade the toolkit or re-train with this version",
            ]
        },

        r"class directory '([^']+)' is empty": {
            "type": "empty_class",
            "hint": "Class '{match}' has no PNG, JPEG or LTT1 files.",
            "suggestions": [
                "Remove the empty directory or add images to it",
                "Expected layout: <root>/<class_name>/<file>",
            ]
        },

        r"cannot decode '([^']+)'": {
            "type": "undecodable_file",
            "hint": "File '{match}' is not a readable image.",
            "suggestions": [
                "Delete or replace the file",
                "Accepted types: .png, .jpg, .jpeg, .ltt",
            ]
        },

        r"classes do not match": {
            "type": "class_mismatch",
            "hint": "The dataset's class folders differ from the network's class names.",
            "suggestions": [
                "Evaluate with the same class folders the model was trained on",
                "Run inspect on the checkpoint to see its class names",
            ]
        },

        r"shape mismatch": {
            "type": "shape_mismatch",
            "hint": "Tensor shapes do not line up.",
            "suggestions": [
                "Check input_height/input_width against the checkpoint's spec",
                "Run inspect to print the expected shapes",
            ]
        },

        r"divergence at epoch (\d+)": {
            "type": "divergence",
            "hint": "The loss became NaN or infinite during epoch {match}.",
            "suggestions": [
                "Lower train.learning_rate",
                "Set train.clip_norm to bound update sizes",
            ]
        },

        r"Extra inputs are not permitted": {
            "type": "unknown_config_key",
            "hint": "The config contains a key the toolkit does not know.",
            "suggestions": [
                "Check the key for typos",
                "Compare with a config.resolved.json from an earlier run",
            ]
        },
    }

    @classmethod
    def enhance_error(cls, error_message: str) -> str:
        """
        Enhance an error message with a hint and numbered suggestions.

        Args:
            error_message: Original error message

        Returns:
            Enhanced error message
        """
        cleaned_error = error_message.strip()

        for pattern, error_info in cls.ERROR_PATTERNS.items():
            match = re.search(pattern, cleaned_error, re.IGNORECASE)
            if match:
                return cls._format_enhanced_error(
                    original_error=cleaned_error,
                    error_info=error_info,
                    match_groups=match.groups() if match.groups() else None,
                )

        return cls._format_basic_error(cleaned_error)

    @classmethod
    def _format_enhanced_error(
        cls,
        original_error: str,
        error_info: dict,
        match_groups: Optional[Tuple] = None,
    ) -> str:
        parts = [original_error, ""]

        hint = error_info["hint"]
        if match_groups and "{match}" in hint:
            hint = hint.replace("{match}", match_groups[0])
        parts.append(f"Hint: {hint}")

        if error_info["suggestions"]:
            parts.append("\nSuggestions:")
            for i, suggestion in enumerate(error_info["suggestions"], 1):
                parts.append(f"  {i}. {suggestion}")

        return "\n".join(parts)

    @classmethod
    def _format_basic_error(cls, error_message: str) -> str:
        parts = [error_message]

        lowered = error_message.lower()
        if "no such file" in lowered or "does not exist" in lowered:
            parts.append("\nHint: A path you passed does not exist.")
        elif "permission" in lowered:
            parts.append("\nHint: The toolkit cannot read or write that path.")

        return "\n".join(parts)

    @classmethod
    def error_type(cls, error_message: str) -> Optional[str]:
        """Return the pattern type an error message matches, if any."""
        for pattern, error_info in cls.ERROR_PATTERNS.items():
            if re.search(pattern, error_message, re.IGNORECASE):
                return error_info["type"]
        return None


def enhance_error_message(error: str) -> str:
    """
    Convenience function to enhance error messages.

    Args:
        error: Original error message

    Returns:
        Enhanced error message with hints and suggestions
    """
    return ErrorEnhancer.enhance_error(error)
