"""vistrace: an in-memory relational engine that captures record-level lineage
during query execution and serves it as the substrate for interactive
visualization: selections, tooltips, details-on-demand, linked brushing,
cross-filtering, and interaction history."""

from .columns import Column, ColumnType
from .errors import (
    CsvParseError,
    DuplicateRelationError,
    EmptyExtentError,
    EngineError,
    NoSharedBaseError,
    NotInvertibleError,
    RowIdOutOfRangeError,
    SchemaMismatchError,
    SelectionOutOfViewportError,
    TypeMismatchError,
    UnknownColumnError,
    UnknownEventError,
    UnknownRelationError,
    UnknownViewError,
    UnreachableTargetError,
)
from .expressions import (
    And,
    Between,
    BinOp,
    Cmp,
    ColRef,
    Const,
    LinearMap,
    Lit,
    Not,
    Or,
    col_in,
)
from .interactions import (
    EventLog,
    InteractionEvent,
    Session,
    create_session,
    crossfilter,
    details_on_demand,
    history,
    linked_brush,
    record_event,
    replay_event,
    tooltip,
)
from .operators import (
    AggSpec,
    BaseRef,
    Filter,
    GroupAgg,
    Join,
    LineageIndex,
    Project,
    extent,
    filter_op,
    group_aggregate,
    hash_join,
    project_op,
)
from .provenance import (
    TraceResult,
    Workflow,
    backward_trace,
    evaluate,
    forward_trace,
    refresh,
    refresh_many,
)
from .relation import Dataset, Relation, Schema, get_rows, ingest_csv
from .viz import (
    ColumnChannel,
    ConstChannel,
    DataPredicate,
    EvaluatedView,
    ExtentSpec,
    GeoChannel,
    Items,
    MarkSpec,
    Range,
    Scale,
    ScaleSpec,
    ScaledChannel,
    ViewDef,
    apply_scale,
    build_view,
    invert_scale,
    resolve_selection,
    viewdef_from_json,
    viewdef_to_json,
)

__version__ = "0.1.0"
