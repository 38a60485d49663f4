"""Leadership analytics from egocentric gaze, scene labels, face tracks and transcripts."""

__version__ = "0.1.0"

from .conversation import (
    AdapterConfig,
    RuleSet,
    Utterance,
    category_ratios,
    classify_external,
    classify_rule,
    load_rule_set,
    load_transcript,
)
from .errors import EgoleadError, IngestError
from .eye_contact import (
    EyeContactParams,
    EyeContactSummary,
    count_eye_contact,
    gaze_in_box,
    group_events,
    load_face_tracks,
    mutual_gaze_frames,
)
from .gaze_events import (
    ClassifierParams,
    EventKind,
    EventTimeline,
    EyeMovementEvent,
    classify_events,
    compute_velocity,
    smooth_gaze,
)
from .ingest import (
    CATEGORIES,
    GazeTrack,
    SessionManifest,
    StreamMeta,
    align_to_frames,
    load_gaze_track,
    make_gaze_track,
    parse_manifest,
)
from .object_fixation import (
    FixationAssignment,
    assign_all,
    assign_fixation,
    load_box_tracks,
    load_label_maps,
    pick_mode,
    render_boxes,
)
from .pipeline import (
    AnalysisConfig,
    analyze_session,
    config_from_dict,
    export_overlay,
    load_analysis,
    load_config,
    validate_session,
    write_outputs,
)
from .report import (
    LeadershipReport,
    TransitionMatrix,
    assemble_report,
    avg_fixation_time,
    build_transition_matrix,
    symmetry_index,
)
from .synth import SynthSpec, blocks_to_spec, generate_session, random_session_spec, score_against_truth
