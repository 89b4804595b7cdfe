"""Exception hierarchy shared by every module.

Each error carries a module-qualified ``code`` (e.g. ``svm.SingleClassInput``)
and an ``exit_code`` used by the command line: 2 config, 3 data, 4 numeric.
"""

CONFIG_ERROR = 2
DATA_ERROR = 3
NUMERIC_ERROR = 4


class TextClfError(Exception):
    module = "textclf"
    exit_code = DATA_ERROR

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


class ConfigInvalid(TextClfError):
    module = "cli"
    exit_code = CONFIG_ERROR


class VersionMismatch(TextClfError):
    module = "cli"


class ArtifactCorrupt(TextClfError):
    module = "cli"


# corpus
class MissingFile(TextClfError):
    module = "corpus"


class MalformedRow(TextClfError):
    module = "corpus"

    def __init__(self, line: int, reason: str = ""):
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class EmptyCorpus(TextClfError):
    module = "corpus"


class UnlabeledDocument(TextClfError):
    module = "corpus"


class LengthMismatch(TextClfError):
    module = "corpus"


class EmptyInput(TextClfError):
    module = "corpus"


# features
class EmptyVocabulary(TextClfError):
    module = "features"


# lexicon
class LexiconMalformedRow(MalformedRow):
    module = "lexicon"

    @property
    def code(self) -> str:
        return "lexicon.MalformedRow"


class PolarityOutOfRange(TextClfError):
    module = "lexicon"

    def __init__(self, line: int, value: float):
        self.line = line
        self.value = value
        super().__init__(f"line {line}: polarity {value} outside [-1, 1]")


# svm / gbdt
class SingleClassInput(TextClfError):
    module = "svm"


class GbdtSingleClassInput(SingleClassInput):
    module = "gbdt"

    @property
    def code(self) -> str:
        return "gbdt.SingleClassInput"


class EmptyMatrix(TextClfError):
    module = "svm"


class DimensionMismatch(TextClfError):
    pass


# transformer / schedule
class ShapeMismatch(TextClfError):
    module = "transformer"


class NonFiniteActivation(TextClfError):
    module = "transformer"
    exit_code = NUMERIC_ERROR


class NonFiniteLoss(TextClfError):
    module = "transformer"
    exit_code = NUMERIC_ERROR


class CorpusTooSmall(TextClfError):
    module = "transformer"


class UnknownToken(TextClfError):
    module = "transformer"


class StepOutOfRange(TextClfError):
    module = "schedule"
    exit_code = CONFIG_ERROR


class StageOutOfRange(TextClfError):
    module = "schedule"
    exit_code = CONFIG_ERROR


class EmptyTrainingSet(TextClfError):
    module = "schedule"


class UnsupportedLabels(TextClfError):
    module = "gbdt"
