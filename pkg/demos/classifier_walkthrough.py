"""Step through the fixation/saccade classifier on a hand-made 10 Hz gaze trace."""

import numpy as np

from egolead.gaze_events import ClassifierParams, classify_events, interval_speed, velocity_threshold
from egolead.ingest import StreamMeta, make_gaze_track

meta = StreamMeta(640, 480, nominal_rate_hz=10)

# one second on the patient, a jump to the monitor, one second there, back again
xy = [(300, 360)] * 10 + [(420, 250)] + [(530, 100)] * 10 + [(420, 230)] + [(300, 360)] * 10
xy = np.array(xy, dtype=float)
xy += np.random.default_rng(0).normal(0, 1.0, xy.shape)  # a pixel of tracker jitter
t = np.arange(len(xy)) * 100_000_000
track = make_gaze_track("L", t, xy[:, 0], xy[:, 1], meta)

params = ClassifierParams()
speed = interval_speed(track)
print("speed per interval (px/s):", np.round(speed).astype(int).tolist())
print("adaptive threshold (px/s):", round(velocity_threshold(speed, params), 1))

timeline = classify_events(track, params)
for ev in timeline.events:
    print(f"  {ev.kind.name:9s} {ev.start_ns / 1e9:5.2f}s .. {ev.end_ns / 1e9:5.2f}s")

# a strict minimum duration turns short fixations into OTHER
strict = classify_events(track, ClassifierParams(min_fixation_ms=1500))
print("with min_fixation_ms=1500:", [ev.kind.name for ev in strict.events])
