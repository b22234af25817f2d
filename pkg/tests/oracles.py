"""Independent reference implementations used to pin expected values.

Everything here is written with plain loops over numpy scalars and stays
independent of the package under test: these are the oracles, not the code
paths they check.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# convolution primitives (torch cross-correlation semantics, zero padding)

def conv2d_loops(x, weight, bias, stride, padding):
    """out[o,i,j] = b[o] + sum_c,u,v w[o,c,u,v] * x[c, i*s-p+u, j*s-p+v]."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_in, h, w = x.shape
    c_out, _, kh, kw = weight.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    for o in range(c_out):
        for i in range(out_h):
            for j in range(out_w):
                acc = bias[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            r = i * stride - padding + u
                            t = j * stride - padding + v
                            if 0 <= r < h and 0 <= t < w:
                                acc += weight[o, c, u, v] * x[c, r, t]
                out[o, i, j] = acc
    return out


def conv_transpose2d_loops(z, weight, bias, stride, padding):
    """Scatter form: z[ci,i,j] adds w[ci,co,u,v] at (i*s-p+u, j*s-p+v)."""
    z = np.asarray(z, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_in, h, w = z.shape
    _, c_out, kh, kw = weight.shape
    out_h = (h - 1) * stride - 2 * padding + kh
    out_w = (w - 1) * stride - 2 * padding + kw
    out = np.zeros((c_out, out_h, out_w))
    for co in range(c_out):
        out[co, :, :] = bias[co]
    for ci in range(c_in):
        for i in range(h):
            for j in range(w):
                for u in range(kh):
                    for v in range(kw):
                        r = i * stride - padding + u
                        t = j * stride - padding + v
                        if 0 <= r < out_h and 0 <= t < out_w:
                            out[:, r, t] += weight[ci, :, u, v] * z[ci, i, j]
    return out


def instance_norm_loops(x, eps=1e-5):
    """Per-channel standardization with biased variance."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for c in range(x.shape[0]):
        mean = x[c].mean()
        var = ((x[c] - mean) ** 2).mean()
        out[c] = (x[c] - mean) / math.sqrt(var + eps)
    return out


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---------------------------------------------------------------------------
# losses

def bce_with_logits_scalar(logit, target):
    """Numerically stable binary cross-entropy on one logit."""
    return max(logit, 0.0) - logit * target + math.log1p(math.exp(-abs(logit)))


def bce_with_logits_mean(logits, target_value):
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    return float(
        np.mean([bce_with_logits_scalar(z, target_value) for z in logits])
    )


# ---------------------------------------------------------------------------
# metrics

def psnr_loops(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    total = 0.0
    count = 0
    for c in range(a.shape[0]):
        for i in range(a.shape[1]):
            for j in range(a.shape[2]):
                diff = a[c, i, j] - b[c, i, j]
                total += diff * diff
                count += 1
    mse = total / count
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window_loops(size=11, sigma=1.5):
    half = (size - 1) // 2
    taps = [math.exp(-(k * k) / (2.0 * sigma * sigma)) for k in range(-half, half + 1)]
    total = sum(taps)
    window = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            window[i, j] = (taps[i] / total) * (taps[j] / total)
    return window


def ssim_loops(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, dynamic_range=1.0):
    """Valid-window SSIM per channel, averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    window = gaussian_window_loops(size, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    channels = []
    for c in range(a.shape[0]):
        scores = []
        for i in range(a.shape[1] - size + 1):
            for j in range(a.shape[2] - size + 1):
                mu_a = mu_b = 0.0
                for u in range(size):
                    for v in range(size):
                        mu_a += window[u, v] * a[c, i + u, j + v]
                        mu_b += window[u, v] * b[c, i + u, j + v]
                var_a = var_b = cov = 0.0
                for u in range(size):
                    for v in range(size):
                        da = a[c, i + u, j + v] - mu_a
                        db = b[c, i + u, j + v] - mu_b
                        var_a += window[u, v] * da * da
                        var_b += window[u, v] * db * db
                        cov += window[u, v] * da * db
                scores.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
                )
            # one row of windows done
        channels.append(float(np.mean(scores)))
    return float(np.mean(channels))


# ---------------------------------------------------------------------------
# exposure fusion

def _reflect(i, n):
    if i < 0:
        return -i - 1
    if i >= n:
        return 2 * n - 1 - i
    return i


def mertens_weight_loops(img, sigma=0.2, eps=1e-12):
    """Scalar-loop contrast * saturation * well-exposedness + eps."""
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    gray = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            gray[i, j] = (img[0, i, j] + img[1, i, j] + img[2, i, j]) / 3.0
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            lap = (
                gray[_reflect(i - 1, h), j]
                + gray[_reflect(i + 1, h), j]
                + gray[i, _reflect(j - 1, w)]
                + gray[i, _reflect(j + 1, w)]
                - 4.0 * gray[i, j]
            )
            contrast = abs(lap)
            rgb = [img[c, i, j] for c in range(3)]
            mean = sum(rgb) / 3.0
            saturation = math.sqrt(sum((v - mean) ** 2 for v in rgb) / 3.0)
            exposedness = 1.0
            for v in rgb:
                exposedness *= math.exp(-((v - 0.5) ** 2) / (2.0 * sigma**2))
            out[i, j] = contrast * saturation * exposedness + eps
    return out


def mertens_single_level_loops(images):
    """Independent single-level fusion: normalized weights, per-pixel blend."""
    images = [np.asarray(img, dtype=np.float64) for img in images]
    weights = [mertens_weight_loops(img) for img in images]
    _, h, w = images[0].shape
    out = np.zeros_like(images[0])
    for i in range(h):
        for j in range(w):
            total = sum(wm[i, j] for wm in weights)
            for c in range(3):
                out[c, i, j] = sum(
                    (wm[i, j] / total) * img[c, i, j]
                    for wm, img in zip(weights, images)
                )
    return out


# ---------------------------------------------------------------------------
# blackbody tint

def blackbody_rgb_loops(kelvin):
    """Published piecewise-log blackbody approximation on byte channels,
    floored at one byte step and peak-normalized."""
    t = kelvin / 100.0
    if t <= 66.0:
        r = 255.0
        g = 99.4708025861 * math.log(t) - 161.1195681661
        b = 0.0 if t <= 19.0 else 138.5177312231 * math.log(t - 10.0) - 305.0447927307
    else:
        r = 329.698727446 * (t - 60.0) ** -0.1332047592
        g = 288.1221695283 * (t - 60.0) ** -0.0755148492
        b = 255.0
    channels = [min(255.0, max(1.0, v)) for v in (r, g, b)]
    peak = max(channels)
    return tuple(v / peak for v in channels)
