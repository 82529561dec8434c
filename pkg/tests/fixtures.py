"""Hand-traced tracker and CLEAR-MOT fixtures shared by unit and acceptance tests."""

from radartrl.decode_track import Detection, Track, TrackState
from radartrl.geometry import OrientedBox


def _box(cx, cy):
    return OrientedBox(cx, cy, 4.0, 8.0, 0.0)


def tracker_fixture():
    """One live track at (10, 10); three detections compete for it with k=5, b=0.3.

    Trace, in confidence order:
      0.9 at cost 3 -> takes id 1 (nearest unmatched track, 3 <= 5)
      0.8 at cost 2 -> track 1 already taken, no candidates; 0.8 >= 0.3 -> new id 2
      0.2 at cost 1 -> no candidates; 0.2 < 0.3 -> discarded
    """
    state = TrackState(tracks=[Track((10.0, 10.0), 1)], next_id=2, k=5.0, birth=0.3)
    dets = [
        Detection(_box(13.0, 10.0), 0.9),
        Detection(_box(10.0, 12.0), 0.8),
        Detection(_box(11.0, 10.0), 0.2),
    ]
    expected = [((13.0, 10.0), 1), ((10.0, 12.0), 2)]
    return state, dets, expected


def _sq(cx, cy):
    return OrientedBox(cx, cy, 9.0, 9.0, 0.0)


def mot_fixture():
    """Five frames, two ground-truth tracks: FN=2, FP=1, IDSW=1, GT=10, MOTP=0.7.

    Against a 9x9 square, a copy shifted by 1 px has IoU 0.8 and one shifted
    by 2.25 px has IoU 0.6.  GT 1 is matched in all frames (IoUs 0.8 x4, 0.6),
    GT 2 in frames 0, 1 and 4 (IoUs 0.6 x3) with a new id in frame 4; frame 2
    holds one far-off false positive.
    """
    gts, preds = [], []
    shifts1 = [1.0, 1.0, 1.0, 1.0, 2.25]
    for t in range(5):
        gts.append([(1, _sq(10.0, 10.0)), (2, _sq(40.0, 40.0))])
        p = [(_sq(10.0 + shifts1[t], 10.0), 100, 0.9)]
        if t in (0, 1):
            p.append((_sq(42.25, 40.0), 200, 0.9))
        if t == 4:
            p.append((_sq(42.25, 40.0), 201, 0.9))
        if t == 2:
            p.append((_sq(60.0, 10.0), 300, 0.5))
        preds.append(p)
    return preds, gts
