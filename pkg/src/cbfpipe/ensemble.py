"""Probabilistic ensemble regressor built from scratch on numpy.

Each member is an MLP mapping the 5-vector (distance, speed, relative
heading, gamma0, gamma1) to four outputs: mean and raw-variance for the
safety-loss target and for the time-to-goal target.  Raw variances pass
through softplus plus a floor so the Gaussian NLL stays defined.  Members
differ only in initialization and shuffle streams; training is plain
mini-batch Adam (or SGD) and is bit-reproducible given a seed.

Everything the attribution stage needs — per-sample gradients, checkpoints
with optimizer and stream state — is exposed here.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

LOG_2PI = math.log(2.0 * math.pi)


class TrainingDivergedError(RuntimeError):
    def __init__(self, member: int, epoch: int):
        super().__init__(f"non-finite loss in member {member} at epoch {epoch}")
        self.member = member
        self.epoch = epoch


@dataclass(frozen=True)
class MlpArchitecture:
    n_inputs: int = 5
    hidden: tuple[int, ...] = (40, 80, 120, 40)
    n_outputs: int = 4
    activation: str = "relu"
    var_floor: float = 1e-6

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.n_outputs % 2 != 0:
            raise ValueError("outputs must pair (mean, raw variance) heads")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n_inputs,) + self.hidden + (self.n_outputs,)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))


class MlpWeights:
    """Per-layer weight matrices (fan_in x fan_out) and bias vectors."""

    def __init__(self, arch: MlpArchitecture, weights, biases):
        self.arch = arch
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, arch: MlpArchitecture, rng: np.random.Generator) -> "MlpWeights":
        # uniform fan-in scaling
        ws, bs = [], []
        sizes = arch.layer_sizes
        for i in range(len(sizes) - 1):
            bound = 1.0 / math.sqrt(sizes[i])
            ws.append(rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1])))
            bs.append(rng.uniform(-bound, bound, size=sizes[i + 1]))
        return cls(arch, ws, bs)

    @classmethod
    def zeros(cls, arch: MlpArchitecture) -> "MlpWeights":
        sizes = arch.layer_sizes
        ws = [np.zeros((sizes[i], sizes[i + 1])) for i in range(len(sizes) - 1)]
        bs = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        return cls(arch, ws, bs)

    def copy(self) -> "MlpWeights":
        return MlpWeights(
            self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )

    def flatten(self) -> np.ndarray:
        """Concatenate parameters: per layer, row-major weights then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def equal(self, other: "MlpWeights") -> bool:
        return all(
            np.array_equal(a, b) for a, b in zip(self.weights, other.weights)
        ) and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(float)
    t = np.tanh(z)
    return 1.0 - t * t


def softplus(x):
    return np.logaddexp(0.0, x)


def forward_raw(m: MlpWeights, x: np.ndarray) -> np.ndarray:
    """Network outputs before the variance transform; x is (n, n_inputs)."""
    a = np.atleast_2d(x)
    for i in range(len(m.weights) - 1):
        a = _act(a @ m.weights[i] + m.biases[i], m.arch.activation)
    return a @ m.weights[-1] + m.biases[-1]


def forward(m: MlpWeights, x: np.ndarray) -> np.ndarray:
    """(n, 4) array of (mu_phi, var_phi, mu_td, var_td), variances floored."""
    out = forward_raw(m, x)
    out = out.copy()
    out[:, 1] = softplus(out[:, 1]) + m.arch.var_floor
    out[:, 3] = softplus(out[:, 3]) + m.arch.var_floor
    return out


def _forward_caches(m: MlpWeights, x: np.ndarray):
    acts = [np.atleast_2d(x)]
    zs = []
    a = acts[0]
    for i in range(len(m.weights) - 1):
        z = a @ m.weights[i] + m.biases[i]
        zs.append(z)
        a = _act(z, m.arch.activation)
        acts.append(a)
    out = a @ m.weights[-1] + m.biases[-1]
    return acts, zs, out


def nll_terms(raw_out: np.ndarray, y: np.ndarray, var_floor: float) -> np.ndarray:
    """Per-sample Gaussian NLL summed over the two heads; raw_out untransformed."""
    total = np.zeros(raw_out.shape[0])
    for mu_col, raw_col, y_col in ((0, 1, 0), (2, 3, 1)):
        var = softplus(raw_out[:, raw_col]) + var_floor
        resid = y[:, y_col] - raw_out[:, mu_col]
        total += 0.5 * (LOG_2PI + np.log(var) + resid * resid / var)
    return total


def nll_loss(pred_row: np.ndarray, label: tuple[float, float], var_floor: float = 1e-6) -> float:
    """NLL of one transformed prediction row (mu, var, mu, var) at a label pair."""
    total = 0.0
    for mu, var, y in ((pred_row[0], pred_row[1], label[0]), (pred_row[2], pred_row[3], label[1])):
        if var < var_floor:
            raise ValueError("variance below floor")
        total += 0.5 * (LOG_2PI + math.log(var) + (y - mu) ** 2 / var)
    return total


def _output_deltas(raw_out: np.ndarray, y: np.ndarray, var_floor: float) -> np.ndarray:
    """Per-sample gradient of the NLL w.r.t. the raw network outputs."""
    dout = np.zeros_like(raw_out)
    for mu_col, raw_col, y_col in ((0, 1, 0), (2, 3, 1)):
        var = softplus(raw_out[:, raw_col]) + var_floor
        resid = raw_out[:, mu_col] - y[:, y_col]
        dout[:, mu_col] = resid / var
        dvar = 0.5 * (1.0 / var - (resid * resid) / (var * var))
        # d softplus(x)/dx = sigmoid(x)
        dout[:, raw_col] = dvar / (1.0 + np.exp(-raw_out[:, raw_col]))
    return dout


def _backward_deltas(m: MlpWeights, zs, dout: np.ndarray):
    """Layer deltas for every sample, from output back to the first hidden layer."""
    deltas = [None] * len(m.weights)
    deltas[-1] = dout
    for i in range(len(m.weights) - 2, -1, -1):
        deltas[i] = (deltas[i + 1] @ m.weights[i + 1].T) * _act_grad(zs[i], m.arch.activation)
    return deltas


def loss_and_grad(m: MlpWeights, x: np.ndarray, y: np.ndarray):
    """Mean NLL over the batch and its gradient per layer."""
    acts, zs, out = _forward_caches(m, x)
    n = x.shape[0]
    loss = float(np.mean(nll_terms(out, y, m.arch.var_floor)))
    dout = _output_deltas(out, y, m.arch.var_floor) / n
    deltas = _backward_deltas(m, zs, dout)
    gw = [acts[i].T @ deltas[i] for i in range(len(m.weights))]
    gb = [deltas[i].sum(axis=0) for i in range(len(m.weights))]
    return loss, gw, gb


def per_sample_gradient(m: MlpWeights, x_row: np.ndarray, y_row: np.ndarray) -> np.ndarray:
    """Flat NLL gradient for a single (already normalized) sample.

    Layout matches MlpWeights.flatten: per layer, row-major weights then bias.
    """
    x = np.atleast_2d(x_row)
    y = np.atleast_2d(y_row)
    acts, zs, out = _forward_caches(m, x)
    dout = _output_deltas(out, y, m.arch.var_floor)
    deltas = _backward_deltas(m, zs, dout)
    parts = []
    for i in range(len(m.weights)):
        parts.append(np.outer(acts[i][0], deltas[i][0]).ravel())
        parts.append(deltas[i][0])
    return np.concatenate(parts)


def batch_gradient_caches(m: MlpWeights, x: np.ndarray, y: np.ndarray):
    """Activations and per-sample deltas, for inner products without
    materializing per-sample gradients."""
    acts, zs, out = _forward_caches(m, x)
    dout = _output_deltas(out, y, m.arch.var_floor)
    deltas = _backward_deltas(m, zs, dout)
    return acts, deltas


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalization":
        std = x.std(axis=0)
        return cls(mean=x.mean(axis=0), std=np.maximum(std, 1e-12))

    @classmethod
    def identity(cls, n: int) -> "Normalization":
        return cls(mean=np.zeros(n), std=np.ones(n))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    k_members: int = 3
    n_checkpoints: int = 10
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple[int, ...] = (40, 80, 120, 40)
    activation: str = "relu"
    var_floor: float = 1e-6
    shuffle: bool = True

    def __post_init__(self):
        if self.k_members < 1:
            raise ValueError("need at least one member")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def arch(self, n_inputs: int = 5, n_outputs: int = 4) -> MlpArchitecture:
        return MlpArchitecture(
            n_inputs=n_inputs,
            hidden=tuple(self.hidden),
            n_outputs=n_outputs,
            activation=self.activation,
            var_floor=self.var_floor,
        )

    def checkpoint_epochs(self) -> list[int]:
        n = min(self.n_checkpoints, self.epochs)
        return sorted({max(1, round(self.epochs * k / n)) for k in range(1, n + 1)})


class AdamState:
    def __init__(self, m: MlpWeights):
        self.t = 0
        self.mw = [np.zeros_like(w) for w in m.weights]
        self.mb = [np.zeros_like(b) for b in m.biases]
        self.vw = [np.zeros_like(w) for w in m.weights]
        self.vb = [np.zeros_like(b) for b in m.biases]

    def copy(self) -> "AdamState":
        out = AdamState.__new__(AdamState)
        out.t = self.t
        out.mw = [a.copy() for a in self.mw]
        out.mb = [a.copy() for a in self.mb]
        out.vw = [a.copy() for a in self.vw]
        out.vb = [a.copy() for a in self.vb]
        return out

    def update(self, m: MlpWeights, gw, gb, cfg: TrainConfig):
        self.t += 1
        b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i in range(len(m.weights)):
            for g, p, mom, vel in (
                (gw[i], m.weights[i], self.mw[i], self.vw[i]),
                (gb[i], m.biases[i], self.mb[i], self.vb[i]),
            ):
                mom *= b1
                mom += (1.0 - b1) * g
                vel *= b2
                vel += (1.0 - b2) * g * g
                p -= cfg.lr * (mom / c1) / (np.sqrt(vel / c2) + eps)


def _sgd_update(m: MlpWeights, gw, gb, lr: float):
    for i in range(len(m.weights)):
        m.weights[i] -= lr * gw[i]
        m.biases[i] -= lr * gb[i]


@dataclass
class Checkpoint:
    """Snapshot taken at an epoch boundary.

    epochs_represented is the number of epochs since the previous snapshot;
    together with lr and batch size it gives the per-sample step coefficient
    the attribution stage needs.  Optimizer and stream states make resumed
    training bit-identical to an uninterrupted run.
    """

    epoch: int
    member_weights: list
    lr: float
    epochs_represented: int
    batch_size: int
    opt_states: list | None = None
    rng_states: list | None = None

    def eta(self) -> float:
        return self.lr * self.epochs_represented / self.batch_size


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple
    normalization: Normalization
    arch: MlpArchitecture
    train_digest: str = ""

    @property
    def k(self) -> int:
        return len(self.members)


def member_seed_sequences(seed: int, k: int):
    return [np.random.SeedSequence([int(seed), m]) for m in range(k)]


def train(
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    seed: int,
    train_digest: str = "",
    resume_from: Checkpoint | None = None,
    normalization: Normalization | None = None,
) -> tuple[EnsembleModel, list[Checkpoint]]:
    """Train the ensemble; returns the final model and its checkpoint list.

    Members train independently: distinct seeded initializations, distinct
    shuffle streams.  With resume_from, training continues after that
    snapshot and reproduces the uninterrupted run exactly.  Input scaling is
    fitted on x unless an explicit normalization is supplied.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    arch = cfg.arch(n_inputs=x.shape[1], n_outputs=2 * y.shape[1])
    norm = normalization if normalization is not None else Normalization.fit(x)
    xn = norm.normalize(x)
    n = x.shape[0]
    ck_epochs = cfg.checkpoint_epochs()

    members = []
    rngs = []
    opts = []
    start_epoch = 0
    if resume_from is None:
        for ss in member_seed_sequences(seed, cfg.k_members):
            rng = np.random.default_rng(ss)
            members.append(MlpWeights.init(arch, rng))
            rngs.append(rng)
            opts.append(AdamState(members[-1]) if cfg.optimizer == "adam" else None)
    else:
        start_epoch = resume_from.epoch
        for mi in range(cfg.k_members):
            members.append(resume_from.member_weights[mi].copy())
            rng = np.random.default_rng()
            rng.bit_generator.state = resume_from.rng_states[mi]
            rngs.append(rng)
            opts.append(
                resume_from.opt_states[mi].copy()
                if cfg.optimizer == "adam" and resume_from.opt_states
                else (AdamState(members[-1]) if cfg.optimizer == "adam" else None)
            )

    checkpoints: list[Checkpoint] = []
    prev_ck = start_epoch
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        for mi in range(cfg.k_members):
            perm = rngs[mi].permutation(n) if cfg.shuffle else np.arange(n)
            for lo in range(0, n, cfg.batch_size):
                idx = perm[lo : lo + cfg.batch_size]
                loss, gw, gb = loss_and_grad(members[mi], xn[idx], y[idx])
                if not math.isfinite(loss):
                    raise TrainingDivergedError(mi, epoch)
                if cfg.optimizer == "adam":
                    opts[mi].update(members[mi], gw, gb, cfg)
                else:
                    _sgd_update(members[mi], gw, gb, cfg.lr)
        if epoch in ck_epochs and epoch > start_epoch:
            checkpoints.append(
                Checkpoint(
                    epoch=epoch,
                    member_weights=[m.copy() for m in members],
                    lr=cfg.lr,
                    epochs_represented=epoch - prev_ck,
                    batch_size=cfg.batch_size,
                    opt_states=[o.copy() if o else None for o in opts],
                    rng_states=[r.bit_generator.state for r in rngs],
                )
            )
            prev_ck = epoch

    model = EnsembleModel(
        members=tuple(members), normalization=norm, arch=arch, train_digest=train_digest
    )
    return model, checkpoints


@dataclass(frozen=True)
class Prediction:
    """Per-member Gaussians for both heads plus pooled mixture moments."""

    member_mu_phi: np.ndarray
    member_var_phi: np.ndarray
    member_mu_td: np.ndarray
    member_var_td: np.ndarray

    @property
    def mu_phi(self) -> float:
        return float(np.mean(self.member_mu_phi))

    @property
    def var_phi(self) -> float:
        return float(pool_variance(self.member_mu_phi, self.member_var_phi))

    @property
    def mu_td(self) -> float:
        return float(np.mean(self.member_mu_td))

    @property
    def var_td(self) -> float:
        return float(pool_variance(self.member_mu_td, self.member_var_td))


def pool_variance(mus: np.ndarray, variances: np.ndarray, axis=0):
    """Variance of the equal-weight Gaussian mixture (total-variance identity)."""
    mu = np.mean(mus, axis=axis)
    return np.mean(variances + np.square(mus), axis=axis) - np.square(mu)


def member_outputs(model: EnsembleModel, x_raw: np.ndarray) -> np.ndarray:
    """(k, n, 4) transformed outputs of every member on raw-feature rows."""
    xn = model.normalization.normalize(np.atleast_2d(np.asarray(x_raw, dtype=float)))
    return np.stack([forward(m, xn) for m in model.members])


def predict(model: EnsembleModel, s, gamma) -> Prediction:
    """Single-query prediction from a feature triple and a parameter pair."""
    row = np.array([s[0], s[1], s[2], gamma.gamma0, gamma.gamma1])
    out = member_outputs(model, row[None, :])
    return Prediction(
        member_mu_phi=out[:, 0, 0],
        member_var_phi=out[:, 0, 1],
        member_mu_td=out[:, 0, 2],
        member_var_td=out[:, 0, 3],
    )


def predict_batch(model: EnsembleModel, x_raw: np.ndarray):
    """Pooled (mu_phi, var_phi, mu_td, var_td) arrays for raw-feature rows."""
    out = member_outputs(model, x_raw)
    mu_phi = out[:, :, 0].mean(axis=0)
    var_phi = pool_variance(out[:, :, 0], out[:, :, 1], axis=0)
    mu_td = out[:, :, 2].mean(axis=0)
    var_td = pool_variance(out[:, :, 2], out[:, :, 3], axis=0)
    return mu_phi, var_phi, mu_td, var_td


def _pairwise_overlap(mus: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Integral of N_i * N_j over the line, for all member pairs."""
    dm = mus[:, None] - mus[None, :]
    sv = variances[:, None] + variances[None, :]
    return np.exp(-0.5 * dm * dm / sv) / np.sqrt(2.0 * math.pi * sv)


def jrd_gaussians(mus: np.ndarray, variances: np.ndarray) -> float:
    """Order-2 Renyi Jensen divergence of equal-weight 1-D Gaussians.

    Closed form via the quadratic integral: H2(p) = -ln int p^2, and the
    mixture's squared integral is the mean of all pairwise overlaps.
    """
    mus = np.asarray(mus, dtype=float)
    variances = np.asarray(variances, dtype=float)
    k = mus.shape[0]
    if k < 2:
        raise ValueError("need at least two members")
    if np.all(mus == mus[0]) and np.all(variances == variances[0]):
        return 0.0
    z = _pairwise_overlap(mus, variances)
    mix_sq = float(np.sum(z)) / (k * k)
    member_h2 = np.log(2.0 * np.sqrt(math.pi * variances))
    return -math.log(mix_sq) - float(np.mean(member_h2))


def jrd(pred: Prediction) -> float:
    """Epistemic disagreement of the members on the safety-loss head."""
    return jrd_gaussians(pred.member_mu_phi, pred.member_var_phi)


def jrd_batch(mus: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Vectorized jrd_gaussians over columns; mus, variances are (k, n)."""
    k, n = mus.shape
    dm = mus[:, None, :] - mus[None, :, :]
    sv = variances[:, None, :] + variances[None, :, :]
    z = np.exp(-0.5 * dm * dm / sv) / np.sqrt(2.0 * math.pi * sv)
    mix_sq = z.sum(axis=(0, 1)) / (k * k)
    member_h2 = np.log(2.0 * np.sqrt(math.pi * variances))
    return -np.log(mix_sq) - member_h2.mean(axis=0)


def cvar_gaussian(mu, var, alpha: float):
    """Upper-tail conditional value at risk of a Gaussian."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    q = ndtri(alpha)
    pdf_q = math.exp(-0.5 * q * q) / math.sqrt(2.0 * math.pi)
    return mu + np.sqrt(var) * pdf_q / (1.0 - alpha)


def cvar(pred: Prediction, alpha: float) -> float:
    """Aleatoric tail risk of the pooled safety-loss Gaussian."""
    return float(cvar_gaussian(pred.mu_phi, pred.var_phi, alpha))


# ---------------------------------------------------------------------------
# serialization: versioned JSON containers with base64 float64 payloads so
# that save -> load round-trips and repeated runs are byte-identical
# ---------------------------------------------------------------------------


def _enc(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _dec(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).copy()


def _arch_dict(arch: MlpArchitecture) -> dict:
    return {
        "n_inputs": arch.n_inputs,
        "hidden": list(arch.hidden),
        "n_outputs": arch.n_outputs,
        "activation": arch.activation,
        "var_floor": arch.var_floor,
        "n_params": arch.n_params,
    }


def _arch_from_dict(d: dict) -> MlpArchitecture:
    return MlpArchitecture(
        n_inputs=d["n_inputs"],
        hidden=tuple(d["hidden"]),
        n_outputs=d["n_outputs"],
        activation=d["activation"],
        var_floor=d["var_floor"],
    )


def _member_dict(m: MlpWeights) -> list:
    return [
        {"shape": list(w.shape), "w": _enc(w), "b": _enc(b)}
        for w, b in zip(m.weights, m.biases)
    ]


def _member_from_dict(arch: MlpArchitecture, layers: list) -> MlpWeights:
    ws = [_dec(d["w"], tuple(d["shape"])) for d in layers]
    bs = [_dec(d["b"], (d["shape"][1],)) for d in layers]
    return MlpWeights(arch, ws, bs)


def dumps_model(model: EnsembleModel) -> str:
    doc = {
        "version": 1,
        "kind": "ensemble",
        "arch": _arch_dict(model.arch),
        "normalization": {
            "mean": _enc(model.normalization.mean),
            "std": _enc(model.normalization.std),
            "n": int(model.normalization.mean.shape[0]),
        },
        "train_digest": model.train_digest,
        "members": [_member_dict(m) for m in model.members],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def loads_model(text: str) -> EnsembleModel:
    doc = json.loads(text)
    if doc.get("kind") != "ensemble" or doc.get("version") != 1:
        raise ValueError("not a version-1 ensemble container")
    arch = _arch_from_dict(doc["arch"])
    n = doc["normalization"]["n"]
    norm = Normalization(
        mean=_dec(doc["normalization"]["mean"], (n,)),
        std=_dec(doc["normalization"]["std"], (n,)),
    )
    members = tuple(_member_from_dict(arch, layers) for layers in doc["members"])
    return EnsembleModel(
        members=members, normalization=norm, arch=arch, train_digest=doc["train_digest"]
    )


def save_model(model: EnsembleModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_model(model) + "\n")


def load_model(path) -> EnsembleModel:
    with open(path, "r", encoding="utf-8") as f:
        return loads_model(f.read())


def dumps_checkpoints(checkpoints: list[Checkpoint], arch: MlpArchitecture) -> str:
    doc = {
        "version": 1,
        "kind": "checkpoints",
        "arch": _arch_dict(arch),
        "checkpoints": [
            {
                "epoch": ck.epoch,
                "lr": ck.lr,
                "epochs_represented": ck.epochs_represented,
                "batch_size": ck.batch_size,
                "members": [_member_dict(m) for m in ck.member_weights],
            }
            for ck in checkpoints
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def loads_checkpoints(text: str) -> tuple[list[Checkpoint], MlpArchitecture]:
    doc = json.loads(text)
    if doc.get("kind") != "checkpoints" or doc.get("version") != 1:
        raise ValueError("not a version-1 checkpoint container")
    arch = _arch_from_dict(doc["arch"])
    out = []
    for c in doc["checkpoints"]:
        out.append(
            Checkpoint(
                epoch=c["epoch"],
                member_weights=[_member_from_dict(arch, layers) for layers in c["members"]],
                lr=c["lr"],
                epochs_represented=c["epochs_represented"],
                batch_size=c["batch_size"],
            )
        )
    return out, arch


def save_checkpoints(checkpoints: list[Checkpoint], arch: MlpArchitecture, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_checkpoints(checkpoints, arch) + "\n")


def load_checkpoints(path) -> tuple[list[Checkpoint], MlpArchitecture]:
    with open(path, "r", encoding="utf-8") as f:
        return loads_checkpoints(f.read())
