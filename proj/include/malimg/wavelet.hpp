#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "malimg/byteplot.hpp"
#include "malimg/errors.hpp"

namespace malimg {

inline constexpr const char* kWaveletLayoutVersion = "wavelet-features-v1";

// Multi-level 2-D Haar decomposition. detail[0] holds the finest level.
// Quadrant convention per level: LL = low rows / low cols, LH = horizontal
// detail (high-pass along x), HL = vertical detail (high-pass along y),
// HH = diagonal.
struct WaveletCoeffs {
    struct Bands {
        PixelTensor lh, hl, hh;
        std::size_t src_h = 0, src_w = 0;  // dimensions this level was analyzed from
    };
    int levels = 0;
    PixelTensor ll;  // final approximation band
    std::vector<Bands> detail;
    std::size_t orig_h = 0, orig_w = 0;
};

enum class Provenance { raw_pixels, wavelet };

struct FeatureVector {
    std::vector<double> values;
    Provenance provenance = Provenance::raw_pixels;

    std::size_t dimension() const { return values.size(); }
};

namespace detail_wavelet {

inline constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;

// Single-level analysis. Odd extents are handled by replicating the last
// row/column before filtering, so output extents are ceil(n/2).
inline void haar_analyze_once(const PixelTensor& in, PixelTensor& ll, PixelTensor& lh,
                              PixelTensor& hl, PixelTensor& hh) {
    const std::size_t h = in.height, w = in.width;
    const std::size_t hh2 = (h + 1) / 2, wh2 = (w + 1) / 2;

    // Rows first: produce low/high column halves.
    PixelTensor low(h, wh2), high(h, wh2);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < wh2; ++c) {
            const std::size_t c0 = 2 * c;
            const std::size_t c1 = std::min(c0 + 1, w - 1);
            const double a = in.at(r, c0), b = in.at(r, c1);
            low.at(r, c) = (a + b) * kInvSqrt2;
            high.at(r, c) = (a - b) * kInvSqrt2;
        }
    }
    // Then columns of each half.
    ll = PixelTensor(hh2, wh2);
    hl = PixelTensor(hh2, wh2);
    lh = PixelTensor(hh2, wh2);
    hh = PixelTensor(hh2, wh2);
    for (std::size_t r = 0; r < hh2; ++r) {
        const std::size_t r0 = 2 * r;
        const std::size_t r1 = std::min(r0 + 1, h - 1);
        for (std::size_t c = 0; c < wh2; ++c) {
            const double la = low.at(r0, c), lb = low.at(r1, c);
            const double ha = high.at(r0, c), hb = high.at(r1, c);
            ll.at(r, c) = (la + lb) * kInvSqrt2;
            hl.at(r, c) = (la - lb) * kInvSqrt2;
            lh.at(r, c) = (ha + hb) * kInvSqrt2;
            hh.at(r, c) = (ha - hb) * kInvSqrt2;
        }
    }
}

inline PixelTensor haar_synthesize_once(const PixelTensor& ll, const PixelTensor& lh,
                                        const PixelTensor& hl, const PixelTensor& hh,
                                        std::size_t out_h, std::size_t out_w) {
    const std::size_t hh2 = ll.height, wh2 = ll.width;
    if (lh.height != hh2 || lh.width != wh2 || hl.height != hh2 || hl.width != wh2 ||
        hh.height != hh2 || hh.width != wh2)
        throw ShapeError("haar_idwt2: subband shapes disagree");
    if ((out_h + 1) / 2 != hh2 || (out_w + 1) / 2 != wh2)
        throw ShapeError("haar_idwt2: subband shape does not match recorded extent");

    // Invert the column pass into the padded (even) grid, then the row pass.
    const std::size_t ph = 2 * hh2, pw = 2 * wh2;
    PixelTensor low(ph, wh2), high(ph, wh2);
    for (std::size_t r = 0; r < hh2; ++r) {
        for (std::size_t c = 0; c < wh2; ++c) {
            low.at(2 * r, c) = (ll.at(r, c) + hl.at(r, c)) * kInvSqrt2;
            low.at(2 * r + 1, c) = (ll.at(r, c) - hl.at(r, c)) * kInvSqrt2;
            high.at(2 * r, c) = (lh.at(r, c) + hh.at(r, c)) * kInvSqrt2;
            high.at(2 * r + 1, c) = (lh.at(r, c) - hh.at(r, c)) * kInvSqrt2;
        }
    }
    PixelTensor padded(ph, pw);
    for (std::size_t r = 0; r < ph; ++r) {
        for (std::size_t c = 0; c < wh2; ++c) {
            padded.at(r, 2 * c) = (low.at(r, c) + high.at(r, c)) * kInvSqrt2;
            padded.at(r, 2 * c + 1) = (low.at(r, c) - high.at(r, c)) * kInvSqrt2;
        }
    }
    PixelTensor out(out_h, out_w);
    for (std::size_t r = 0; r < out_h; ++r)
        for (std::size_t c = 0; c < out_w; ++c) out.at(r, c) = padded.at(r, c);
    return out;
}

}  // namespace detail_wavelet

// Orthonormal Haar analysis; energy is preserved for even extents at every
// level, which all 64x64 detector inputs satisfy.
inline WaveletCoeffs haar_dwt2(const PixelTensor& tensor, int levels) {
    if (levels < 1) throw LevelError("haar_dwt2: levels must be positive");
    if (tensor.height == 0 || tensor.width == 0)
        throw ShapeError("haar_dwt2: empty tensor");
    const std::size_t depth = static_cast<std::size_t>(1) << levels;
    if (std::min(tensor.height, tensor.width) < depth)
        throw LevelError("haar_dwt2: " + std::to_string(levels) +
                         " levels too deep for tensor extent");

    WaveletCoeffs coeffs;
    coeffs.levels = levels;
    coeffs.orig_h = tensor.height;
    coeffs.orig_w = tensor.width;

    PixelTensor current = tensor;
    for (int l = 0; l < levels; ++l) {
        WaveletCoeffs::Bands bands;
        bands.src_h = current.height;
        bands.src_w = current.width;
        PixelTensor ll;
        detail_wavelet::haar_analyze_once(current, ll, bands.lh, bands.hl, bands.hh);
        coeffs.detail.push_back(std::move(bands));
        current = std::move(ll);
    }
    coeffs.ll = std::move(current);
    return coeffs;
}

// Inverse transform; reproduces the analyzed tensor to ~1e-9 per cell.
inline PixelTensor haar_idwt2(const WaveletCoeffs& coeffs) {
    if (coeffs.levels < 1 || coeffs.detail.size() != static_cast<std::size_t>(coeffs.levels))
        throw ShapeError("haar_idwt2: malformed coefficient set");
    PixelTensor current = coeffs.ll;
    for (int l = coeffs.levels - 1; l >= 0; --l) {
        const auto& bands = coeffs.detail[static_cast<std::size_t>(l)];
        current = detail_wavelet::haar_synthesize_once(current, bands.lh, bands.hl, bands.hh,
                                                       bands.src_h, bands.src_w);
    }
    return current;
}

// Feature layout (fixed, see kWaveletLayoutVersion): final LL flattened
// row-major, then per level (finest first) the mean / standard deviation /
// energy of LH, HL, HH. For a 64x64 input at 2 levels: 256 + 18 = 274.
inline FeatureVector wavelet_features(const PixelTensor& tensor, int levels) {
    const WaveletCoeffs coeffs = haar_dwt2(tensor, levels);
    FeatureVector fv;
    fv.provenance = Provenance::wavelet;
    fv.values.reserve(coeffs.ll.size() + static_cast<std::size_t>(levels) * 9);
    fv.values.insert(fv.values.end(), coeffs.ll.values.begin(), coeffs.ll.values.end());

    auto push_stats = [&fv](const PixelTensor& band) {
        double sum = 0.0, sum_sq = 0.0;
        for (double v : band.values) {
            sum += v;
            sum_sq += v * v;
        }
        const double n = static_cast<double>(band.size());
        const double mean = sum / n;
        const double var = std::max(0.0, sum_sq / n - mean * mean);
        fv.values.push_back(mean);
        fv.values.push_back(std::sqrt(var));
        fv.values.push_back(sum_sq);
    };
    for (const auto& bands : coeffs.detail) {
        push_stats(bands.lh);
        push_stats(bands.hl);
        push_stats(bands.hh);
    }
    return fv;
}

// Nested coefficient-plane arrangement squashed into [0,1] with fixed
// per-band affine maps, usable as CNN input. For unit-range inputs the level
// l approximation lies in [0, 2^l] and level l details in [-2^(l-1), 2^(l-1)].
inline PixelTensor wavelet_plane(const WaveletCoeffs& coeffs) {
    PixelTensor plane(coeffs.orig_h, coeffs.orig_w, 0.0);

    auto place = [&plane](const PixelTensor& band, std::size_t row0, std::size_t col0,
                          double lo, double hi) {
        for (std::size_t r = 0; r < band.height; ++r)
            for (std::size_t c = 0; c < band.width; ++c)
                plane.at(row0 + r, col0 + c) =
                    std::clamp((band.at(r, c) - lo) / (hi - lo), 0.0, 1.0);
    };

    const double ll_hi = std::exp2(coeffs.levels);
    place(coeffs.ll, 0, 0, 0.0, ll_hi);
    for (int l = coeffs.levels; l >= 1; --l) {
        const auto& bands = coeffs.detail[static_cast<std::size_t>(l - 1)];
        const double d = std::exp2(l - 1);
        const std::size_t h = bands.lh.height, w = bands.lh.width;
        place(bands.lh, 0, w, -d, d);
        place(bands.hl, h, 0, -d, d);
        place(bands.hh, h, w, -d, d);
    }
    return plane;
}

}  // namespace malimg
