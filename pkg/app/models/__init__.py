from .stream import StreamId, ScheduleSet, make_set, parse_set
from .network import Geometry, DropChannels, ChannelState
from .phy import Distortion, CooperativePair, EffectiveStream, RateReport
from .graph import ConnectivityGraph, ConflictGraph, ChordalCompletion, CliqueList, LoadVector, StabilityReport
from .queue import QueueMatrix, ServiceDecision, ArrivalRecord
from .scheduling import (
    AveragingMode,
    SchedulerKind,
    UtilityParams,
    FadingGrid,
    UserState,
    CliqueState,
    ScheduleDecision,
    WARM_START_RATE,
)
from .simulation import FrameRecord, DropResult, CdfSummary
