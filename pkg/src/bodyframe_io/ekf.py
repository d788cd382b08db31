"""Error-state EKF fusing IMU propagation with body-frame velocity.

State is the NavState nominal plus a 15-dim error covariance over
(delta_xi, delta_v, delta_p, delta_b_a, delta_b_g) with the left
orientation convention R_true = Exp(delta_xi) R_hat. Propagation
composes the corrector (additive reading corrections plus per-frame
white-noise stds) with the kinematic step and its exact Jacobians;
the update consumes a body-frame velocity measurement

    h(X) = R_hat^T v_hat,   H = [R_hat^T [v]_x | R_hat^T | 0]

with Joseph-form covariance, retracting the nominal state through the
boxplus operator.

Two runners share one code path: streaming_run maintains FIFO buffers
exactly as an online system would, while batch_run indexes the full
arrays directly. Both chunk the stream at the velocity-update cadence,
re-run corrector/provider inference over the trailing window each
chunk, consume only the newly produced frames, and feed the provider
the filter's own pre-update attitude history (recorded once per frame
and never revised). Their outputs agree to the last bit.

Per-interval convention: the reading at frame i propagates the filter
across the interval ending at t_i, so each arriving sample is corrected
and consumed the moment it is seen.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .corrector import CorrectionOutput, correct_and_quantify
from .errors import ConfigError, DataError, SingularUpdateError, TimestampOrderError
from .imu_model import ImuSample, ImuWindow, RepresentationKind, transform_representation
from .motion_model import VelocityMeasurement
from .preintegration import (
    ERROR_DIM,
    NavState,
    ProcessNoise,
    process_noise_covariance,
    propagate_covariance,
    propagate_state,
    propagation_jacobians,
    state_boxplus,
)
from .so3 import hat

_SINGULAR_COND = 1e12


@dataclass
class FilterState:
    """Nominal state, error covariance, and the time they refer to."""

    x: NavState
    P: np.ndarray
    t: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (ERROR_DIM, ERROR_DIM):
            raise DataError(f"P must be {ERROR_DIM}x{ERROR_DIM}, got {self.P.shape}")

    def copy(self) -> "FilterState":
        return FilterState(x=self.x.copy(), P=self.P.copy(), t=self.t)


#: conservative default initial error stds: 1e-2 rad attitude, 1e-1 m/s
#: velocity, 1e-1 m position, 1e-2 accel bias, 1e-3 gyro bias
DEFAULT_P0_DIAG = (1e-4,) * 3 + (1e-2,) * 3 + (1e-2,) * 3 + (1e-4,) * 3 + (1e-6,) * 3


@dataclass(frozen=True)
class EkfConfig:
    """Filter wiring.

    eta_bg / eta_ba are the per-sample random-walk stds fed straight
    into the process-noise matrix (convert a continuous density by
    multiplying with sqrt(dt) before building the config). White-noise
    stds come from the corrector output per frame, not from here.
    """

    update_rate: float = 20.0
    buffer_len: int = 1000
    eta_bg: float = 1e-6
    eta_ba: float = 1e-5
    p0_diag: tuple = DEFAULT_P0_DIAG

    def validate(self):
        if self.update_rate <= 0.0:
            raise ConfigError("update_rate must be positive")
        if self.buffer_len < 1:
            raise ConfigError("buffer_len must be >= 1")
        if self.eta_bg < 0.0 or self.eta_ba < 0.0:
            raise ConfigError("random-walk stds must be nonnegative")
        if len(self.p0_diag) != ERROR_DIM or any(v < 0 for v in self.p0_diag):
            raise ConfigError(f"p0_diag must be {ERROR_DIM} nonnegative variances")

    def initial_covariance(self) -> np.ndarray:
        return np.diag(np.asarray(self.p0_diag, dtype=float))


def ekf_propagate(
    fs: FilterState,
    sample: ImuSample,
    correction: CorrectionOutput,
    dt: float,
    cfg: EkfConfig,
) -> FilterState:
    """One corrected-IMU step: nominal kinematics plus A P A' + B W B'."""
    if dt <= 0.0:
        raise DataError("dt must be positive")
    w_hat = sample.w + correction.gyro_correction[-1]
    a_hat = sample.a + correction.accel_correction[-1]
    x_next = propagate_state(fs.x, w_hat, a_hat, dt)
    a_mat, b_mat = propagation_jacobians(fs.x, w_hat, a_hat, dt)
    noise = ProcessNoise(
        eta_g=correction.eta_g[-1],
        eta_a=correction.eta_a[-1],
        eta_bg=cfg.eta_bg,
        eta_ba=cfg.eta_ba,
    )
    p_next = propagate_covariance(fs.P, a_mat, b_mat, process_noise_covariance(noise))
    return FilterState(x=x_next, P=p_next, t=fs.t + dt)


def predicted_velocity(fs: FilterState) -> np.ndarray:
    """The measurement model h(X) = R_hat^T v_hat."""
    return fs.x.r.T @ fs.x.v


def measurement_jacobian(fs: FilterState) -> np.ndarray:
    """3x15 Jacobian of h w.r.t. the error state (left convention)."""
    h = np.zeros((3, ERROR_DIM))
    rt = fs.x.r.T
    h[:, 0:3] = rt @ hat(fs.x.v)
    h[:, 3:6] = rt
    return h


def ekf_update(fs: FilterState, z: VelocityMeasurement) -> FilterState:
    """Fuse one body-frame velocity measurement (Joseph-form update)."""
    eta = np.asarray(z.eta_v, dtype=float)
    if np.any(eta <= 0.0):
        raise DataError("measurement stds must be strictly positive")
    h_mat = measurement_jacobian(fs)
    sigma = np.diag(eta * eta)
    s_mat = h_mat @ fs.P @ h_mat.T + sigma
    s_mat = 0.5 * (s_mat + s_mat.T)
    if np.linalg.cond(s_mat) > _SINGULAR_COND:
        raise SingularUpdateError(
            f"innovation covariance condition number exceeds {_SINGULAR_COND:g}"
        )
    gain = np.linalg.solve(s_mat.T, (fs.P @ h_mat.T).T).T  # P H' S^-1
    innovation = z.v_body - predicted_velocity(fs)
    delta = gain @ innovation
    x_new = state_boxplus(fs.x, delta)
    i_kh = np.eye(ERROR_DIM) - gain @ h_mat
    p_new = i_kh @ fs.P @ i_kh.T + gain @ sigma @ gain.T
    p_new = 0.5 * (p_new + p_new.T)
    return FilterState(x=x_new, P=p_new, t=fs.t)


# ---------------------------------------------------------------------------
# runners


def _chunk_size(samples, cfg: EkfConfig) -> int:
    dt = samples[1].t - samples[0].t
    imu_rate = 1.0 / dt
    if cfg.update_rate > imu_rate * (1.0 + 1e-9):
        raise ConfigError(
            f"update_rate {cfg.update_rate} Hz exceeds IMU rate {imu_rate:.6g} Hz"
        )
    return max(1, int(round(imu_rate / cfg.update_rate)))


def _validate_stream(samples):
    if len(samples) < 2:
        raise DataError("need at least two IMU samples")
    for i in range(1, len(samples)):
        if samples[i].t <= samples[i - 1].t:
            raise TimestampOrderError(
                f"timestamps must increase strictly (sample {i})"
            )


def _provider_window(window: ImuWindow, rotations, provider) -> ImuWindow:
    kind = getattr(provider, "required_kind", None)
    if kind is None or kind is RepresentationKind.BODY:
        return window
    return transform_representation(window, kind, rotations)


def streaming_run(imu_stream, provider, corrector, cfg: EkfConfig, x0: NavState, p0=None):
    """Online filter pass over a time-ordered IMU stream.

    Samples arrive in chunks of round(imu_rate / update_rate) frames.
    Each chunk: push the frames into the FIFO buffer, run the corrector
    over the whole window, propagate through the new frames (recording
    each new pre-update attitude), run the velocity provider over the
    window (re-expressed with the recorded attitudes when the provider
    asks for a non-body representation), and update with the newest
    frame's measurement. Returns one FilterState per input sample.
    """
    cfg.validate()
    samples = list(imu_stream)
    _validate_stream(samples)
    k = _chunk_size(samples, cfg)
    p0 = cfg.initial_covariance() if p0 is None else np.asarray(p0, dtype=float)

    fs = FilterState(x=x0.copy(), P=p0.copy(), t=samples[0].t)
    states = [fs]
    buffer: deque = deque(maxlen=cfg.buffer_len)
    attitudes: deque = deque(maxlen=cfg.buffer_len)
    buffer.append(samples[0])
    attitudes.append(x0.r.copy())

    n = len(samples)
    start = 1
    while start < n:
        stop = min(start + k, n)
        new = samples[start:stop]
        buffer.extend(new)
        window = ImuWindow.from_samples(list(buffer), kind=RepresentationKind.BODY)
        corrected, corr = correct_and_quantify(corrector, window)

        n_new = len(new)
        base = len(window) - n_new
        for j, i in enumerate(range(start, stop)):
            dt = samples[i].t - samples[i - 1].t
            fs = ekf_propagate(fs, samples[i], corr.frame(base + j), dt, cfg)
            attitudes.append(fs.x.r.copy())
            states.append(fs)

        pwin = _provider_window(corrected, np.stack(attitudes), provider)
        meas = provider.predict_window(pwin, n_new)
        if (stop - 1) % k == 0:
            fs = ekf_update(fs, meas[-1])
            states[-1] = fs
        start = stop
    return states


def batch_run(imu_stream, provider, corrector, cfg: EkfConfig, x0: NavState, p0=None):
    """Offline pass with identical chunking, windows, and arithmetic.

    Instead of FIFO queues it slices preassembled arrays; outputs match
    streaming_run to the last bit on the same inputs.
    """
    cfg.validate()
    samples = list(imu_stream)
    _validate_stream(samples)
    k = _chunk_size(samples, cfg)
    p0 = cfg.initial_covariance() if p0 is None else np.asarray(p0, dtype=float)

    n = len(samples)
    t_arr = np.array([s.t for s in samples])
    w_arr = np.array([s.w for s in samples])
    a_arr = np.array([s.a for s in samples])
    rot_hist = np.empty((n, 3, 3))
    rot_hist[0] = x0.r

    fs = FilterState(x=x0.copy(), P=p0.copy(), t=samples[0].t)
    states = [fs]
    start = 1
    while start < n:
        stop = min(start + k, n)
        lo = max(0, stop - cfg.buffer_len)
        window = ImuWindow(
            t=t_arr[lo:stop], w=w_arr[lo:stop], a=a_arr[lo:stop],
            kind=RepresentationKind.BODY,
        )
        corrected, corr = correct_and_quantify(corrector, window)

        n_new = stop - start
        base = len(window) - n_new
        for j, i in enumerate(range(start, stop)):
            dt = t_arr[i] - t_arr[i - 1]
            fs = ekf_propagate(fs, samples[i], corr.frame(base + j), dt, cfg)
            rot_hist[i] = fs.x.r
            states.append(fs)

        pwin = _provider_window(corrected, rot_hist[lo:stop], provider)
        meas = provider.predict_window(pwin, n_new)
        if (stop - 1) % k == 0:
            fs = ekf_update(fs, meas[-1])
            states[-1] = fs
        start = stop
    return states
