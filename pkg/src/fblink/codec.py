"""Modulo-folded feedback coding of short blocks over the duplex link.

One block carries a message pair (w_R, w_I), one index per real sub-channel,
as PAM centers on [-sqrt(3), sqrt(3)]. Use 1 sends the centers at power P/2
per sub-channel. After every use the decoder feeds back its running estimate,
folded into [-d/2, d/2) and masked by a shared uniform dither; the encoder
recovers the estimation error through the same fold, rescales it to full
power, and sends it back. Each round trip contracts the error variance by the
factor (1 + snr*|h|^2/(psi1*psi2)), which is exactly what the rate formula in
`analysis` integrates over n_t uses.

The schedule below is the whole contract between the parties:

    alpha_i   error variance after use i, alpha_1 = 1/(|h|^2*snr)
    gamma_i   feedback scaling, gamma_i^2*alpha_i = P_fb/(2L) - sigma2^2/(2|h_fb|^2)
    lam       forward rescale sqrt(L*P/P_fb), makes E[x_i^2] = P/2 exactly
    beta_i    decoder's regression coefficient for use i
    d         fold width sqrt(6*P_fb), so the mask power d^2/12 = P_fb/2

The fold argument gamma_i*eps_i + fb-noise has variance P_fb/(2L) by the gamma
choice, putting the per-step fold ("aliasing") probability at its budgeted
share of tau. A fold is invisible in-protocol: the encoder refines a wrong
error, the block usually dies, and only the simulator-side transcript knows.

Batch arrays are laid out (trial, use); everything vectorizes across trials.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channel import NoiseSpec, Realization, cn_sample, derotate
from .analysis import aliasing_budget

__all__ = [
    "MAX_SUB_CHANNEL_BITS",
    "PamConstellation",
    "Schedule",
    "BatchResult",
    "BlockTranscript",
    "build_constellation",
    "build_schedule",
    "modulo_d",
    "sample_dither",
    "draw_block_noise",
    "run_block_batch",
    "transmit_block",
    "pack_message",
    "unpack_message",
]

_SQRT3 = math.sqrt(3.0)

# Interval decode needs the fold spacing to clear float64 rounding on
# magnitudes ~sqrt(3); 40 bits leaves four orders of margin.
MAX_SUB_CHANNEL_BITS = 40


# =====================================================================
# Constellation
# =====================================================================


@dataclass(frozen=True)
class PamConstellation:
    """2^bits equal sub-intervals of [-sqrt(3), sqrt(3)], message at each center.

    Centers are computed arithmetically; at 40 bits there are a trillion of
    them, so nothing here materializes the alphabet.
    """

    bits: int
    m_levels: int

    @property
    def power(self) -> float:
        """Second moment of a uniform message, (m^2 - 1)/m^2 <= 1."""
        m = self.m_levels
        return (m * m - 1.0) / (m * m)

    @property
    def half_width(self) -> float:
        return _SQRT3 / self.m_levels

    @property
    def centers(self) -> np.ndarray:
        """The full alphabet; only sensible for small constellations."""
        if self.bits > 24:
            raise ValueError("refusing to materialize 2^%d centers" % self.bits)
        return self.center(np.arange(self.m_levels))

    def center(self, idx):
        """Center of sub-interval idx, vectorized."""
        idx = np.asarray(idx, dtype=np.int64)
        return -_SQRT3 + (2.0 * idx + 1.0) * (_SQRT3 / self.m_levels)

    def decode(self, theta_hat):
        """Index of the sub-interval containing theta_hat, clamped at the edges."""
        idx = np.floor((np.asarray(theta_hat) + _SQRT3)
                       * (self.m_levels / (2.0 * _SQRT3))).astype(np.int64)
        return np.clip(idx, 0, self.m_levels - 1)


def build_constellation(payload_bits_sub) -> PamConstellation:
    bits = int(payload_bits_sub)
    if bits < 0 or bits > MAX_SUB_CHANNEL_BITS:
        raise ValueError(
            "sub-channel payload must be 0..%d bits, got %r"
            % (MAX_SUB_CHANNEL_BITS, payload_bits_sub))
    return PamConstellation(bits, 1 << bits)


def pack_message(bits):
    """Split a bit array (MSB first) into the (w_R, w_I) index pair.

    The R sub-channel takes ceil(len/2) bits, the extra bit of an odd payload
    riding on R. Zero-length payloads map to (0, 0) over 1-point
    constellations.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    b_r = (len(bits) + 1) // 2
    w_r = 0
    for b in bits[:b_r]:
        w_r = (w_r << 1) | int(b)
    w_i = 0
    for b in bits[b_r:]:
        w_i = (w_i << 1) | int(b)
    return w_r, w_i, b_r, len(bits) - b_r


def unpack_message(w_r, w_i, bits_r, bits_i):
    """Inverse of pack_message; returns the uint8 bit array, MSB first."""
    out = np.empty(bits_r + bits_i, dtype=np.uint8)
    for j in range(bits_r):
        out[bits_r - 1 - j] = (int(w_r) >> j) & 1
    for j in range(bits_i):
        out[bits_r + bits_i - 1 - j] = (int(w_i) >> j) & 1
    return out


# =====================================================================
# Parameter schedule
# =====================================================================


@dataclass(frozen=True)
class Schedule:
    """Per-block coefficient schedule at one channel realization.

    gamma and beta are indexed by refinement step: gamma[j] scales the
    feedback after use j+1, beta[j] is the decoder coefficient at use j+2.
    alpha[i] is the error variance after use i+1.
    """

    n_t: int
    tau: float
    L: float
    d: float
    lam: float
    gamma: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    P: float
    P_fb: float
    snr: float
    snr_fb: float
    gain_fwd: float
    gain_fb: float
    sigma1_2: float
    sigma2_2: float


def build_schedule(snr, snr_fb, tau, n_t, realization: Realization,
                   noise: NoiseSpec) -> Schedule:
    """Coefficients for an n_t-use block; raises if the realization is in outage.

    Callers are expected to have screened feasibility through
    analysis.achievable_rate; an infeasible schedule here is a programming
    error, hence ValueError rather than a flag.
    """
    n_t = int(n_t)
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    gain_fwd = realization.gain_fwd
    gain_fb = realization.gain_fb
    if gain_fwd <= 0.0:
        raise ValueError("schedule infeasible: zero forward gain")
    P = snr * noise.sigma1_2
    P_fb = snr_fb * noise.sigma2_2
    d = math.sqrt(6.0 * P_fb)
    alpha1 = 1.0 / (gain_fwd * snr)

    if n_t == 1:
        empty = np.empty(0)
        return Schedule(1, tau, 0.0, d, 0.0, empty, empty,
                        np.array([alpha1]), P, P_fb, snr, snr_fb,
                        gain_fwd, gain_fb, noise.sigma1_2, noise.sigma2_2)

    L = aliasing_budget(tau, n_t)
    fb_strength = gain_fb * snr_fb
    if fb_strength <= L:
        raise ValueError(
            "schedule infeasible: feedback outage (|h_fb|^2*snr_fb = %.4g <= L = %.4g)"
            % (fb_strength, L))
    psi1 = 1.0 + L * gain_fwd * snr / fb_strength
    psi2 = 1.0 / (1.0 - L / fb_strength)
    growth = 1.0 + snr * gain_fwd / (psi1 * psi2)

    alpha = alpha1 * growth ** (-np.arange(n_t, dtype=float))
    fb_signal_var = P_fb / (2.0 * L) - noise.sigma2_2 / (2.0 * gain_fb)
    gamma = np.sqrt(fb_signal_var / alpha[:-1])
    lam = math.sqrt(L * P / P_fb)
    # decoder regression coefficient, kept in its published form; it equals
    # the MMSE weight sqrt(2*P*c*alpha)/(P + sigma1^2/|h|^2) algebraically
    c = 1.0 - L / fb_strength
    beta = (np.sqrt(2.0 * alpha[:-1]) / math.sqrt(noise.sigma1_2)) \
        * math.sqrt(snr * c) / (snr + 1.0 / gain_fwd)
    return Schedule(n_t, tau, L, d, lam, gamma, beta, alpha, P, P_fb,
                    snr, snr_fb, gain_fwd, gain_fb,
                    noise.sigma1_2, noise.sigma2_2)


def modulo_d(x, d):
    """Fold x into the half-open interval [-d/2, d/2)."""
    x = np.asarray(x)
    return x - d * np.floor(x / d + 0.5)


def sample_dither(rng, n_t, d):
    """Shared dither, one uniform [-d/2, d/2) sequence per real sub-channel.

    Shape (n_t - 1, 2); column 0 masks the R sub-channel, column 1 the I.
    Known to encoder and decoder only; the whole security story rides on the
    adversary never seeing these draws.
    """
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    return rng.uniform(-d / 2.0, d / 2.0, size=(n_t - 1, 2))


# =====================================================================
# Block engine
# =====================================================================


@dataclass
class BatchResult:
    dec_r: np.ndarray
    dec_i: np.ndarray
    error: np.ndarray
    alias_events: np.ndarray
    eps_hist: np.ndarray | None = None        # (n, n_t, 2)
    theta_hat_hist: np.ndarray | None = None  # (n, n_t, 2)
    x_seq: np.ndarray | None = None           # (n, n_t) complex
    x_fb_seq: np.ndarray | None = None        # (n, n_t-1) complex
    y_seq: np.ndarray | None = None
    y_fb_seq: np.ndarray | None = None
    z_seq: np.ndarray | None = None


def draw_block_noise(rng, n, n_t, noise: NoiseSpec, d, capture_eve=False):
    """Draw everything a batch of n blocks consumes, in documented order.

    Order: dither (n, n_t-1, 2), forward noise (n, n_t), feedback noise
    (n, n_t-1), then adversary noise (n, n_t) only when capture_eve. Keeping
    the order fixed is what lets a task substream reproduce its batch.
    """
    dither = rng.uniform(-d / 2.0, d / 2.0, size=(n, n_t - 1, 2))
    eta_fwd = cn_sample(rng, noise.sigma1_2, (n, n_t))
    eta_fb = cn_sample(rng, noise.sigma2_2, (n, max(n_t - 1, 0)))
    eta_eve = cn_sample(rng, noise.sigma_e2, (n, n_t)) if capture_eve else None
    return dither, eta_fwd, eta_fb, eta_eve


def run_block_batch(sched: Schedule, realization: Realization,
                    const_r: PamConstellation, const_i: PamConstellation,
                    msg_r, msg_i, dither, eta_fwd, eta_fb, eta_eve=None,
                    record=False) -> BatchResult:
    """Run n blocks through the feedback loop with externally drawn noise.

    Pure function of its arrays: no RNG inside, so zero-noise limits and
    transcript replays are exact. msg_* are (n,) integer indices; dither is
    (n, n_t-1, 2); eta_fwd (n, n_t) complex; eta_fb (n, n_t-1) complex;
    eta_eve optional (n, n_t) complex, enabling the adversary tap.
    """
    n_t = sched.n_t
    msg_r = np.atleast_1d(np.asarray(msg_r, dtype=np.int64))
    msg_i = np.atleast_1d(np.asarray(msg_i, dtype=np.int64))
    n = len(msg_r)
    theta_r = const_r.center(msg_r)
    theta_i = const_i.center(msg_i)
    sqrt_pr = math.sqrt(sched.P / 2.0)
    half_d = sched.d / 2.0

    alias = np.zeros(n, dtype=np.int64)
    rec = record
    if rec:
        eps_hist = np.empty((n, n_t, 2))
        th_hist = np.empty((n, n_t, 2))
        x_seq = np.empty((n, n_t), dtype=complex)
        xfb_seq = np.empty((n, n_t - 1), dtype=complex)
        y_seq = np.empty((n, n_t), dtype=complex)
        yfb_seq = np.empty((n, n_t - 1), dtype=complex)
    z_seq = np.empty((n, n_t), dtype=complex) if eta_eve is not None else None

    x_cur = sqrt_pr * (theta_r + 1j * theta_i)
    th_r = th_i = None
    for i in range(1, n_t + 1):
        y = realization.h * x_cur + eta_fwd[:, i - 1]
        yp_r, yp_i = derotate(y, realization.h)
        if i == 1:
            th_r = yp_r / sqrt_pr
            th_i = yp_i / sqrt_pr
        else:
            b = sched.beta[i - 2]
            th_r = th_r - b * yp_r
            th_i = th_i - b * yp_i
        if rec:
            x_seq[:, i - 1] = x_cur
            y_seq[:, i - 1] = y
            th_hist[:, i - 1, 0] = th_r
            th_hist[:, i - 1, 1] = th_i
            eps_hist[:, i - 1, 0] = th_r - theta_r
            eps_hist[:, i - 1, 1] = th_i - theta_i

        if i < n_t:
            g = sched.gamma[i - 1]
            v_r = dither[:, i - 1, 0]
            v_i = dither[:, i - 1, 1]
            xfb_r = modulo_d(g * th_r + v_r, sched.d)
            xfb_i = modulo_d(g * th_i + v_i, sched.d)
            xfb = xfb_r + 1j * xfb_i
            if z_seq is not None:
                z_seq[:, i - 1] = (realization.g * x_cur
                                   + realization.g_fb * xfb + eta_eve[:, i - 1])
            yfb = realization.h_fb * xfb + eta_fb[:, i - 1]
            w_r, w_i = derotate(yfb, realization.h_fb)
            # simulator-side truth: fold event per sub-channel
            fb_noise_r = w_r - xfb_r
            fb_noise_i = w_i - xfb_i
            arg_r = g * (th_r - theta_r) + fb_noise_r
            arg_i = g * (th_i - theta_i) + fb_noise_i
            alias += ((arg_r < -half_d) | (arg_r >= half_d)).astype(np.int64)
            alias += ((arg_i < -half_d) | (arg_i >= half_d)).astype(np.int64)
            et_r = modulo_d(w_r - g * theta_r - v_r, sched.d) / g
            et_i = modulo_d(w_i - g * theta_i - v_i, sched.d) / g
            x_cur = sched.lam * g * (et_r + 1j * et_i)
            if rec:
                xfb_seq[:, i - 1] = xfb
                yfb_seq[:, i - 1] = yfb
        elif z_seq is not None:
            z_seq[:, i - 1] = realization.g * x_cur + eta_eve[:, i - 1]

    dec_r = const_r.decode(th_r)
    dec_i = const_i.decode(th_i)
    err = (dec_r != msg_r) | (dec_i != msg_i)
    return BatchResult(
        dec_r, dec_i, err, alias,
        eps_hist=eps_hist if rec else None,
        theta_hat_hist=th_hist if rec else None,
        x_seq=x_seq if rec else None,
        x_fb_seq=xfb_seq if rec else None,
        y_seq=y_seq if rec else None,
        y_fb_seq=yfb_seq if rec else None,
        z_seq=z_seq)


# =====================================================================
# Single-block transcript
# =====================================================================


@dataclass
class BlockTranscript:
    """Everything one block produced, for replay tests and adversary feeds."""

    msg_sent: tuple
    msg_decoded: tuple
    error: bool
    aliasing_events: int
    x_seq: np.ndarray
    x_fb_seq: np.ndarray
    y_seq: np.ndarray
    y_fb_seq: np.ndarray
    theta_hat_seq: np.ndarray
    eps_seq: np.ndarray
    dither_seq: np.ndarray
    z_seq: np.ndarray | None = None


def transmit_block(msg, sched: Schedule, const_r: PamConstellation,
                   const_i: PamConstellation, realization: Realization,
                   noise: NoiseSpec, dither_seq, rng,
                   capture_eve=False) -> BlockTranscript:
    """Send one message pair through one block and record the transcript.

    Noise is drawn from rng in the order forward, feedback, adversary. The
    dither sequence comes from the caller because encoder and decoder share
    it ahead of time; see sample_dither.
    """
    w_r, w_i = msg
    if not (0 <= w_r < const_r.m_levels and 0 <= w_i < const_i.m_levels):
        raise ValueError("message indices outside the constellations")
    dither_seq = np.asarray(dither_seq, dtype=float).reshape(1, sched.n_t - 1, 2)
    eta_fwd = cn_sample(rng, noise.sigma1_2, (1, sched.n_t))
    eta_fb = cn_sample(rng, noise.sigma2_2, (1, sched.n_t - 1))
    eta_eve = cn_sample(rng, noise.sigma_e2, (1, sched.n_t)) if capture_eve else None
    out = run_block_batch(sched, realization, const_r, const_i,
                          [w_r], [w_i], dither_seq, eta_fwd, eta_fb,
                          eta_eve=eta_eve, record=True)
    return BlockTranscript(
        msg_sent=(w_r, w_i),
        msg_decoded=(int(out.dec_r[0]), int(out.dec_i[0])),
        error=bool(out.error[0]),
        aliasing_events=int(out.alias_events[0]),
        x_seq=out.x_seq[0],
        x_fb_seq=out.x_fb_seq[0],
        y_seq=out.y_seq[0],
        y_fb_seq=out.y_fb_seq[0],
        theta_hat_seq=out.theta_hat_hist[0],
        eps_seq=out.eps_hist[0],
        dither_seq=dither_seq[0],
        z_seq=out.z_seq[0] if out.z_seq is not None else None)
