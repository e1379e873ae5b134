"""Independent scalar-by-scalar reference implementations used as test
oracles. Everything here works on plain Python lists and math functions,
deliberately sharing no code with the package under test."""
import math


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def matvec(mat, vec):
    return [sum(row[j] * vec[j] for j in range(len(vec))) for row in mat]


def vadd(a, b):
    return [x + y for x, y in zip(a, b)]


def softmax(xs):
    m = max(xs)
    exps = [math.exp(x - m) for x in xs]
    s = sum(exps)
    return [e / s for e in exps]


def cross_entropy(logits, gold):
    return -math.log(softmax(logits)[gold])


def gru_step(x, h, p):
    """p: dict with keys Vz, Vr, Vh (matrices over x), Wz, Wr, Wh
    (matrices over h), bz, br, bh (vectors)."""
    z = [sigmoid(v) for v in vadd(vadd(matvec(p["Vz"], x), matvec(p["Wz"], h)), p["bz"])]
    r = [sigmoid(v) for v in vadd(vadd(matvec(p["Vr"], x), matvec(p["Wr"], h)), p["br"])]
    hr = [h[i] * r[i] for i in range(len(h))]
    v = [math.tanh(t) for t in vadd(vadd(matvec(p["Vh"], x), matvec(p["Wh"], hr)), p["bh"])]
    return [(1.0 - z[i]) * v[i] + z[i] * h[i] for i in range(len(h))]


def context_step(x, h, p):
    """GRU step followed by the tanh dense projection (keys Wp, bp)."""
    g = gru_step(x, h, p)
    return [math.tanh(t) for t in vadd(matvec(p["Wp"], g), p["bp"])]


def encode_sentence(ids, embedding, fwd, bwd):
    hidden = len(fwd["bz"])
    h_f = [0.0] * hidden
    for i in ids:
        h_f = gru_step(embedding[i], h_f, fwd)
    h_b = [0.0] * hidden
    for i in reversed(ids):
        h_b = gru_step(embedding[i], h_b, bwd)
    return h_f + h_b


def decode_nll(h_cxt, gold, dec):
    """Teacher-forced NLL of gold (BOS...EOS) given the context vector.

    dec: gru param dict plus bridge_W, bridge_b, out_W, out_b, embedding.
    """
    h = [math.tanh(t) for t in vadd(matvec(dec["bridge_W"], h_cxt), dec["bridge_b"])]
    nll = 0.0
    for pos in range(len(gold) - 1):
        h = gru_step(dec["embedding"][gold[pos]], h, dec)
        logits = vadd(matvec(dec["out_W"], h), dec["out_b"])
        nll += cross_entropy(logits, gold[pos + 1])
    return nll


def hred_conversation_nll(utt_ids, enc, ctx, dec, bos, eos):
    """Full source-model unroll: encode turn t, advance context, decode
    turn t+1; summed token NLL."""
    hidden = len(ctx["bz"])
    h_cxt = [0.0] * hidden
    total = 0.0
    for t in range(len(utt_ids) - 1):
        sent = encode_sentence(utt_ids[t], enc["embedding"], enc["fwd"], enc["bwd"])
        h_cxt = context_step(sent, h_cxt, ctx)
        total += decode_nll(h_cxt, [bos] + utt_ids[t + 1] + [eos], dec)
    return total


def erc_forward(utt_vectors, ctx, head_w, head_b):
    """Per-turn logits for pre-encoded sentence vectors."""
    hidden = len(ctx["bz"])
    h = [0.0] * hidden
    outputs = []
    for vec in utt_vectors:
        h = context_step(vec, h, ctx)
        outputs.append(vadd(matvec(head_w, h), head_b))
    return outputs


def enumerate_best_sequence(step_logits_fn, vocab, eos, max_len):
    """Exhaustive search over all token sequences up to max_len.

    step_logits_fn(prefix) must return the log-probability vector for the
    next position given the generated prefix (a tuple). A sequence is
    complete when it ends with EOS or reaches max_len. Returns
    (best_sequence, best_score); ties prefer the lexicographically
    smallest sequence of those first discovered in BFS order.
    """
    best = (None, -math.inf)
    stack = [((), 0.0)]
    while stack:
        prefix, score = stack.pop(0)
        lp = step_logits_fn(prefix)
        for tok in range(vocab):
            seq = prefix + (tok,)
            s = score + lp[tok]
            if tok == eos or len(seq) == max_len:
                if s > best[1]:
                    best = (seq, s)
            else:
                stack.append((seq, s))
    return best


def confusion_fscore(gold, pred, exclude=()):
    """Naive per-class confusion counting for the weighted F oracle."""
    pairs = [(g, p) for g, p in zip(gold, pred) if g not in exclude]
    classes = sorted({g for g, _ in pairs} | {p for _, p in pairs if p not in exclude})
    total = len(pairs)
    value = 0.0
    for c in classes:
        tp = sum(1 for g, p in pairs if g == c and p == c)
        fp = sum(1 for g, p in pairs if g != c and p == c)
        fn = sum(1 for g, p in pairs if g == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        value += ((tp + fn) / total) * f1
    return value


def gru_param_dict(rng, in_dim, hidden, scale=0.5):
    """Random plain-list GRU parameters for oracle comparisons."""
    def mat(rows, cols):
        return [[float(rng.uniform(-scale, scale)) for _ in range(cols)] for _ in range(rows)]
    return {
        "Vz": mat(hidden, in_dim), "Vr": mat(hidden, in_dim), "Vh": mat(hidden, in_dim),
        "Wz": mat(hidden, hidden), "Wr": mat(hidden, hidden), "Wh": mat(hidden, hidden),
        "bz": [float(rng.uniform(-scale, scale)) for _ in range(hidden)],
        "br": [float(rng.uniform(-scale, scale)) for _ in range(hidden)],
        "bh": [float(rng.uniform(-scale, scale)) for _ in range(hidden)],
    }
