"""Independent brute-force reference implementations used as test oracles."""

from rxpipe.ehr import Kind


def greedy_match(patients, events, generic, tol=30):
    """Greedy nearest-dob matching written directly over raw patient/event lists.

    ``patients``: dict id -> (sex, dob); ``events``: list of Event.
    Returns (pairs as (case, control, index), unmatched case ids).
    """
    last = {pid: dob for pid, (_, dob) in patients.items()}
    first = {}
    for e in events:
        last[e.patient_id] = max(last[e.patient_id], e.date)
        if e.kind == Kind.PRESCRIPTION and e.code == generic:
            if e.patient_id not in first or e.date < first[e.patient_id]:
                first[e.patient_id] = e.date
    cases = sorted(first.items(), key=lambda kv: (kv[1], kv[0]))
    used = set()
    pairs, unmatched = [], []
    for case, index in cases:
        sex, dob = patients[case]
        best = None
        for pid, (s, d) in patients.items():
            if pid in first or pid in used or s != sex or abs(d - dob) > tol or last[pid] < index:
                continue
            key = (abs(d - dob), pid)
            if best is None or key < best:
                best = key
        if best is None:
            unmatched.append(case)
        else:
            used.add(best[1])
            pairs.append((case, best[1], index))
    return pairs, unmatched


def gini(labels):
    n = len(labels)
    p = sum(labels) / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def exhaustive_split(X, y, rows, candidates, numeric):
    """Enumerate every (feature, threshold) among candidates; returns best or None."""
    labels = [y[r] for r in rows]
    n, pos = len(rows), sum(labels)
    parent = gini(labels)
    best = None
    for f in sorted(candidates):
        if numeric[f]:
            values = sorted({X[r][f] for r in rows})
            thresholds = [(a + b) / 2.0 for a, b in zip(values, values[1:])]
        else:
            thresholds = [0.5]
        for t in thresholds:
            left = [y[r] for r in rows if X[r][f] <= t]
            right = [y[r] for r in rows if X[r][f] > t]
            if not left or not right:
                continue
            n_l, n_r = len(left), len(right)
            pos_r = sum(right)
            dec = parent - (n_l * _g(pos - pos_r, n_l) + n_r * _g(pos_r, n_r)) / n
            if dec > 1e-12 and (best is None or dec > best[2]):
                best = (f, t, dec)
    return best


def _g(pos, n):
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def reference_tree(X, y, rows, numeric, min_samples_split=2):
    """Fully grown tree with every feature as a candidate; nested tuples
    ("leaf", fraction, n) / ("split", f, t, left, right)."""
    labels = [y[r] for r in rows]
    n, pos = len(rows), sum(labels)
    if pos in (0, n) or n < min_samples_split:
        return ("leaf", pos / n, n)
    best = exhaustive_split(X, y, rows, range(len(X[0])), numeric)
    if best is None:
        return ("leaf", pos / n, n)
    f, t, _ = best
    left = [r for r in rows if X[r][f] <= t]
    right = [r for r in rows if X[r][f] > t]
    return ("split", f, t, reference_tree(X, y, left, numeric, min_samples_split),
            reference_tree(X, y, right, numeric, min_samples_split))


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def pair_violations(pairs, patients, events, generic, tol=30):
    """Check matched pairs against the matching rules directly on raw data.

    Returns a list of human-readable violations (empty when all hold).
    """
    last = {pid: dob for pid, (_, dob) in patients.items()}
    first = {}
    for e in events:
        last[e.patient_id] = max(last[e.patient_id], e.date)
        if e.kind == Kind.PRESCRIPTION and e.code == generic:
            first[e.patient_id] = min(first.get(e.patient_id, e.date), e.date)
    problems, seen = [], set()
    for case, control, index in pairs:
        if first.get(case) != index:
            problems.append(f"{case}: index is not the first prescription")
        if patients[case][0] != patients[control][0]:
            problems.append(f"{case}/{control}: sex differs")
        if abs(patients[case][1] - patients[control][1]) > tol:
            problems.append(f"{case}/{control}: dob too far apart")
        if last[control] < index:
            problems.append(f"{control}: no contact on or after index")
        if control in first:
            problems.append(f"{control}: control was prescribed the drug")
        if control in seen:
            problems.append(f"{control}: control reused")
        seen.add(control)
    return problems
