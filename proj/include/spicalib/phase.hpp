#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "spicalib/image.hpp"
#include "spicalib/parallel.hpp"
#include "spicalib/twin.hpp"

namespace spicalib::phase {

constexpr double kModulationThreshold = 0.05;

struct FringeImage {
  GridF pixels;          // intensities in [0, 1]
  double period_T = 0.0; // device units per fringe cycle
  int direction = 0;     // 0 = horizontal
};

struct WrappedPhase {
  GridF wrapped;     // atan2 phase in (-pi, pi]
  GridF modulation;  // recovered fringe amplitude
  GridF mean;        // frame average (marker detection input)
  Mask mask;         // modulation above threshold
};

// Full per-pixel phase state after unwrapping.
struct PhaseMaps {
  GridF wrapped;
  GridI order_k;
  GridF absolute;        // 2*pi*order_k + wrapped on the mask
  Mask modulation_mask;  // modulated pixels that also received an order
};

// N-step phase shifting, shifts delta_n = 2*pi*n/N.
inline WrappedPhase phase_shift_wrapped(const std::vector<GridF>& frames,
                                        double threshold = kModulationThreshold) {
  size_t n = frames.size();
  if (n < 3)
    throw Error(ErrorKind::InsufficientFrames, "phase shifting needs at least 3 frames");
  for (size_t i = 1; i < n; ++i) require_same_size(frames[0], frames[i], "phase_shift_wrapped");

  int w = frames[0].width, h = frames[0].height;
  WrappedPhase maps{GridF(w, h, 0.0), GridF(w, h, 0.0), GridF(w, h, 0.0), Mask(w, h, 0)};

  std::vector<double> sines(n), cosines(n);
  for (size_t k = 0; k < n; ++k) {
    double d = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    sines[k] = std::sin(d);
    cosines[k] = std::cos(d);
  }

  parallel_for_rows(h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0, c = 0.0, sum = 0.0;
        for (size_t k = 0; k < n; ++k) {
          double v = frames[k].at(x, y);
          s += v * sines[k];
          c += v * cosines[k];
          sum += v;
        }
        double b = 2.0 / static_cast<double>(n) * std::hypot(s, c);
        maps.wrapped.at(x, y) = (s == 0.0 && c == 0.0) ? 0.0 : std::atan2(s, c);
        maps.modulation.at(x, y) = b;
        maps.mean.at(x, y) = sum / static_cast<double>(n);
        maps.mask.at(x, y) = b > threshold ? 255 : 0;
      }
  });
  return maps;
}

// RMS of the intensity component the sinusoid model cannot explain; zero for
// noiseless frames. Needs at least one residual degree of freedom (N > 3).
inline double estimate_intensity_noise(const std::vector<GridF>& frames, const Mask& mask) {
  size_t n = frames.size();
  if (n <= 3) return 0.0;
  std::vector<double> sines(n), cosines(n);
  for (size_t k = 0; k < n; ++k) {
    double d = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    sines[k] = std::sin(d);
    cosines[k] = std::cos(d);
  }
  double acc = 0.0;
  size_t count = 0;
  for (int y = 0; y < frames[0].height; ++y)
    for (int x = 0; x < frames[0].width; ++x) {
      if (!mask_at(mask, x, y)) continue;
      double s = 0.0, c = 0.0, sum = 0.0;
      for (size_t k = 0; k < n; ++k) {
        double v = frames[k].at(x, y);
        s += v * sines[k];
        c += v * cosines[k];
        sum += v;
      }
      double a = sum / static_cast<double>(n);
      double bs = 2.0 * s / static_cast<double>(n), bc = 2.0 * c / static_cast<double>(n);
      double res = 0.0;
      for (size_t k = 0; k < n; ++k) {
        double model = a + bc * cosines[k] + bs * sines[k];
        double r = frames[k].at(x, y) - model;
        res += r * r;
      }
      acc += res / static_cast<double>(n - 3);
      ++count;
    }
  return count ? std::sqrt(acc / static_cast<double>(count)) : 0.0;
}

// Bright bridge across one full fringe, detected on the N-frame mean image:
// there the fringes average to the mid level (1+beta)/2 of the local shading
// while the bridge keeps the full envelope, so it is the only region sitting
// well above its own column's brightness baseline.
struct MarkerRegion {
  int u0 = 0;
  int u1 = -1;              // inclusive column range
  std::vector<int> v_lo;    // per-column band start
  std::vector<int> v_hi;    // per-column band end (inclusive)
  int v_center = 0;

  int band_lo(int u) const { return v_lo[std::clamp(u, u0, u1) - u0]; }
  int band_hi(int u) const { return v_hi[std::clamp(u, u0, u1) - u0]; }
};

namespace detail {

inline double otsu_threshold(const GridF& img) {
  constexpr int kBins = 256;
  std::vector<double> hist(kBins, 0.0);
  for (double v : img.data) {
    int b = std::clamp(static_cast<int>(v * (kBins - 1) + 0.5), 0, kBins - 1);
    hist[b] += 1.0;
  }
  double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int cut = kBins / 2;
  for (int i = 0; i < kBins - 1; ++i) {
    w0 += hist[i];
    if (w0 == 0.0) continue;
    double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += i * hist[i];
    double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      cut = i;
    }
  }
  return (cut + 0.5) / (kBins - 1);
}

}  // namespace detail

inline MarkerRegion detect_marker(const GridF& image) {
  int w = image.width, h = image.height;
  double fg_cut = detail::otsu_threshold(image);

  // A pixel is a marker candidate when it exceeds its column-local brightness
  // baseline by more than the fringe-average-to-envelope gap allows.
  constexpr int kBaselineHalf = 15;
  constexpr double kContrast = 1.125;
  Mask cand(w, h, 0);
  std::vector<double> window;
  size_t n_fg = 0;
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y) {
      if (image.at(x, y) <= fg_cut) continue;
      ++n_fg;
      window.clear();
      for (int v = std::max(0, y - kBaselineHalf); v <= std::min(h - 1, y + kBaselineHalf);
           ++v)
        if (image.at(x, v) > fg_cut) window.push_back(image.at(x, v));
      if (window.size() < 8) continue;
      std::nth_element(window.begin(), window.begin() + window.size() / 2, window.end());
      double baseline = window[window.size() / 2];
      if (image.at(x, y) > kContrast * baseline) cand.at(x, y) = 255;
    }
  if (n_fg < 64)
    throw Error(ErrorKind::MarkerNotFound, "too little foreground to search");

  // Connected components of candidates; the marker is a solid, narrow,
  // roughly one-fringe-tall block.
  GridI label(w, h, -1);
  int n_labels = 0;
  struct Blob {
    int u0, u1, v0, v1;
    size_t pixels = 0;
  };
  std::vector<Blob> blobs;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask_at(cand, x, y) || label.at(x, y) >= 0) continue;
      Blob blob{x, x, y, y, 0};
      std::deque<std::pair<int, int>> work{{x, y}};
      label.at(x, y) = n_labels;
      while (!work.empty()) {
        auto [cx, cy] = work.front();
        work.pop_front();
        ++blob.pixels;
        blob.u0 = std::min(blob.u0, cx);
        blob.u1 = std::max(blob.u1, cx);
        blob.v0 = std::min(blob.v0, cy);
        blob.v1 = std::max(blob.v1, cy);
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int nx = cx + dx[k], ny = cy + dy[k];
          if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
          if (!mask_at(cand, nx, ny) || label.at(nx, ny) >= 0) continue;
          label.at(nx, ny) = n_labels;
          work.emplace_back(nx, ny);
        }
      }
      blobs.push_back(blob);
      ++n_labels;
    }

  int best = -1;
  for (int i = 0; i < n_labels; ++i) {
    const Blob& b = blobs[i];
    int bw = b.u1 - b.u0 + 1, bh = b.v1 - b.v0 + 1;
    double fill = static_cast<double>(b.pixels) / (static_cast<double>(bw) * bh);
    if (b.pixels < 10 || bw < 3 || bh < 3) continue;
    if (bw > w / 4 || bh > h / 3) continue;  // marker is a narrow vertical bridge
    if (fill < 0.45) continue;
    if (best < 0 || b.pixels > blobs[best].pixels) best = i;
  }
  if (best < 0)
    throw Error(ErrorKind::MarkerNotFound, "no bright bridge across a fringe found");

  const Blob& b = blobs[best];
  MarkerRegion region;
  region.u0 = b.u0;
  region.u1 = b.u1;
  region.v_lo.assign(b.u1 - b.u0 + 1, -1);
  region.v_hi.assign(b.u1 - b.u0 + 1, -1);
  std::vector<int> centers;
  for (int x = b.u0; x <= b.u1; ++x) {
    int lo = -1, hi = -1;
    for (int y = b.v0; y <= b.v1; ++y)
      if (label.at(x, y) == best) {
        if (lo < 0) lo = y;
        hi = y;
      }
    region.v_lo[x - b.u0] = lo;
    region.v_hi[x - b.u0] = hi;
    if (lo >= 0) centers.push_back((lo + hi) / 2);
  }
  for (size_t k = 0; k < region.v_lo.size(); ++k) {  // fill gaps from the left
    if (region.v_lo[k] >= 0) continue;
    size_t src = k;
    while (src > 0 && region.v_lo[src] < 0) --src;
    region.v_lo[k] = region.v_lo[src];
    region.v_hi[k] = region.v_hi[src];
  }
  std::nth_element(centers.begin(), centers.begin() + centers.size() / 2, centers.end());
  region.v_center = centers[centers.size() / 2];
  return region;
}

struct UnwrapResult {
  GridI order_k;      // fringe order per pixel
  Mask mask;          // input mask minus pixels no consistent path reaches
  size_t unreachable = 0;
};

namespace detail {

// Largest tolerated per-step phase change; larger implied steps mean the
// fringe is spatially aliased and the edge cannot be trusted.
constexpr double kMaxStep = 2.2;

inline bool propagate_step(const GridF& wrapped, const GridI& k, GridI& out, int from_x,
                           int from_y, int to_x, int to_y) {
  double wa = wrapped.at(from_x, from_y);
  double wb = wrapped.at(to_x, to_y);
  int dk = static_cast<int>(std::lround((wa - wb) / (2.0 * M_PI)));
  double step = 2.0 * M_PI * dk + wb - wa;
  if (std::abs(step) > kMaxStep) return false;
  out.at(to_x, to_y) = k.at(from_x, from_y) + dk;
  return true;
}

}  // namespace detail

// Anchors the marker's fringe at order zero and propagates along columns,
// filling disconnected columns sideways within the mask.
inline UnwrapResult unwrap_orders(const GridF& wrapped, const Mask& mask,
                                  const MarkerRegion& marker) {
  require_same_size(wrapped, mask, "unwrap_orders");
  int w = wrapped.width, h = wrapped.height;
  constexpr int kUnset = std::numeric_limits<int32_t>::min();
  UnwrapResult res{GridI(w, h, kUnset), Mask(w, h, 0), 0};

  // Seed order zero on modulated pixels flanking the marker, middle third of
  // the bridged band (safely inside the marked fringe).
  std::deque<std::pair<int, int>> queue;
  auto seed_column = [&](int u, int band_u) {
    if (u < 0 || u >= w) return;
    int lo = marker.band_lo(band_u), hi = marker.band_hi(band_u);
    int third = std::max(1, (hi - lo + 1) / 3);
    for (int v = lo + third; v <= hi - third && v < h; ++v) {
      if (v < 0 || !mask_at(mask, u, v)) continue;
      if (res.order_k.at(u, v) != kUnset) continue;
      res.order_k.at(u, v) = 0;
      queue.emplace_back(u, v);
    }
  };
  for (int off = 1; off <= 3; ++off) {
    seed_column(marker.u0 - off, marker.u0);
    seed_column(marker.u1 + off, marker.u1);
  }
  if (queue.empty())
    throw Error(ErrorKind::MarkerNotFound, "no modulated pixels flank the marker");

  // Column-first flood: vertical closure from each seed, then sideways steps.
  auto try_step = [&](int fx, int fy, int tx, int ty) -> bool {
    if (tx < 0 || tx >= w || ty < 0 || ty >= h) return false;
    if (!mask_at(mask, tx, ty) || res.order_k.at(tx, ty) != kUnset) return false;
    return detail::propagate_step(wrapped, res.order_k, res.order_k, fx, fy, tx, ty);
  };
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    for (int dir = -1; dir <= 1; dir += 2) {  // walk the column both ways
      int v = y;
      while (try_step(x, v, x, v + dir)) {
        v += dir;
        if (try_step(x, v, x - 1, v)) queue.emplace_back(x - 1, v);
        if (try_step(x, v, x + 1, v)) queue.emplace_back(x + 1, v);
      }
    }
    if (try_step(x, y, x - 1, y)) queue.emplace_back(x - 1, y);
    if (try_step(x, y, x + 1, y)) queue.emplace_back(x + 1, y);
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool masked = mask_at(mask, x, y);
      bool reached = res.order_k.at(x, y) != kUnset;
      if (masked && reached) {
        res.mask.at(x, y) = 255;
      } else {
        if (masked) ++res.unreachable;
        res.order_k.at(x, y) = 0;
      }
    }
  return res;
}

// phi = 2*pi*k + wrapped on the valid mask, zero elsewhere.
inline GridF absolute_phase(const GridF& wrapped, const GridI& order_k, const Mask& mask) {
  require_same_size(wrapped, order_k, "absolute_phase");
  require_same_size(wrapped, mask, "absolute_phase");
  GridF abs_phase(wrapped.width, wrapped.height, 0.0);
  for (int y = 0; y < wrapped.height; ++y)
    for (int x = 0; x < wrapped.width; ++x)
      if (mask_at(mask, x, y))
        abs_phase.at(x, y) = 2.0 * M_PI * order_k.at(x, y) + wrapped.at(x, y);
  return abs_phase;
}

inline double phase_to_vs(double phi, double period_T) {
  return phi * period_T / (2.0 * M_PI);
}

// Device row coordinate map: vs = phi * T / (2*pi).
inline GridF phase_to_vs(const GridF& abs_phase, double period_T) {
  if (period_T <= 0.0) throw Error(ErrorKind::InvalidRange, "period must be positive");
  GridF vs(abs_phase.width, abs_phase.height, 0.0);
  for (size_t i = 0; i < abs_phase.size(); ++i)
    vs.data[i] = phase_to_vs(abs_phase.data[i], period_T);
  return vs;
}

// Ground-truth absolute phase from the twin; stands in for a learned
// fringe-analysis stage.
inline GridF analytic_phase(const twin::SceneConfig& scene) {
  return twin::render(scene).phase_true;
}

struct DenoiseInfo {
  bool applied = false;
  double noise_rms = 0.0;        // intensity units
  double sigma_px = 0.0;
  size_t trimmed_boundary = 0;   // mask pixels dropped at the boundary
};

// Boundary pixels dropped by the denoiser: their local fits only have
// one-sided support, which leaves a systematic residual no polynomial
// order removes.
constexpr int kDenoiseTrimPx = 2;

// Removes masked pixels within `radius` (Euclidean) of an unmasked or
// out-of-bounds pixel.
inline Mask erode_mask(const Mask& mask, int radius) {
  Mask out = mask;
  if (radius <= 0) return out;
  parallel_for_rows(mask.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < mask.width; ++x) {
        if (!mask_at(mask, x, y)) continue;
        bool keep = true;
        for (int dy = -radius; dy <= radius && keep; ++dy)
          for (int dx = -radius; dx <= radius && keep; ++dx) {
            if (dx * dx + dy * dy > radius * radius) continue;
            int xx = x + dx, yy = y + dy;
            if (xx < 0 || yy < 0 || xx >= mask.width || yy >= mask.height ||
                !mask_at(mask, xx, yy))
              keep = false;
          }
        if (!keep) out.at(x, y) = 0;
      }
  });
  return out;
}

// Masked local polynomial regression (Gaussian-weighted, degree 2 or 3) with
// one robust reweighting pass; reproduces smooth fields exactly up to the
// basis order and never mixes values across the mask. When a per-pixel weight
// grid is given (fringe modulation squared ~ inverse phase variance), samples
// with weak signal contribute proportionally less to their neighbors' fits.
inline GridF smooth_local_poly(const GridF& field, const Mask& mask, double sigma,
                               int radius, int degree = 3,
                               const GridF* sample_weight = nullptr) {
  if (degree < 1 || degree > 4)
    throw Error(ErrorKind::InvalidRange, "smoothing degree must be within [1, 4]");
  int w = field.width, h = field.height;
  const int nb = (degree + 1) * (degree + 2) / 2;  // monomials with i + j <= degree
  GridF out = field;
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      kernel[static_cast<size_t>(dy + radius) * (2 * radius + 1) + (dx + radius)] =
          std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));

  parallel_for_rows(h, [&](int y0, int y1) {
    Eigen::MatrixXd ata(nb, nb);
    Eigen::VectorXd atb(nb), coef(nb), row(nb);
    auto basis = [&](double dx, double dy) {
      double xp[5], yp[5];
      xp[0] = yp[0] = 1.0;
      for (int i = 1; i <= degree; ++i) {
        xp[i] = xp[i - 1] * dx;
        yp[i] = yp[i - 1] * dy;
      }
      int k = 0;
      for (int total = 0; total <= degree; ++total)
        for (int i = total; i >= 0; --i) row(k++) = xp[i] * yp[total - i];
    };
    std::vector<std::array<double, 3>> samples;  // dx, dy, value
    std::vector<double> weights;
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        if (!mask_at(mask, x, y)) continue;
        samples.clear();
        weights.clear();
        for (int dy = -radius; dy <= radius; ++dy) {
          int yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int dx = -radius; dx <= radius; ++dx) {
            int xx = x + dx;
            if (xx < 0 || xx >= w || !mask_at(mask, xx, yy)) continue;
            double wgt =
                kernel[static_cast<size_t>(dy + radius) * (2 * radius + 1) + (dx + radius)];
            if (sample_weight) {
              double sw = sample_weight->at(xx, yy);
              wgt *= std::max(sw, 0.0);
            }
            if (wgt <= 0.0) continue;
            samples.push_back({double(dx), double(dy), field.at(xx, yy)});
            weights.push_back(wgt);
          }
        }
        if (int(samples.size()) < nb + 2) continue;  // keep the raw value near tiny islands
        for (int pass = 0; pass < 2; ++pass) {
          ata.setZero();
          atb.setZero();
          for (size_t i = 0; i < samples.size(); ++i) {
            basis(samples[i][0], samples[i][1]);
            ata.noalias() += weights[i] * row * row.transpose();
            atb.noalias() += weights[i] * samples[i][2] * row;
          }
          Eigen::LDLT<Eigen::MatrixXd> ldlt(ata);
          if (ldlt.info() != Eigen::Success) break;
          coef = ldlt.solve(atb);
          if (pass == 1) break;
          // Robust pass: damp samples far from the local fit (crease guard).
          std::vector<double> resid(samples.size());
          for (size_t i = 0; i < samples.size(); ++i) {
            basis(samples[i][0], samples[i][1]);
            resid[i] = std::abs(samples[i][2] - row.dot(coef));
          }
          std::vector<double> sorted = resid;
          std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
          double mad = std::max(sorted[sorted.size() / 2], 1e-6);
          for (size_t i = 0; i < samples.size(); ++i) {
            double r = resid[i] / (4.0 * mad);
            weights[i] /= (1.0 + r * r);
          }
        }
        out.at(x, y) = coef(0);
      }
  });
  return out;
}

// Applies the smoother only when the frames actually carry noise, so
// noiseless pipelines stay bit-exact. Phase variance after phase shifting
// scales as 1/modulation^2, so the modulation map (when given) supplies the
// statistically matched sample weights. The mask loses a thin boundary ring
// whose one-sided fits stay biased under noise.
inline DenoiseInfo denoise_absolute_phase(GridF& abs_phase, Mask& mask,
                                          const std::vector<GridF>& frames,
                                          const GridF* modulation = nullptr) {
  DenoiseInfo info;
  info.noise_rms = estimate_intensity_noise(frames, mask);
  if (info.noise_rms < 1e-4) return info;
  info.applied = true;
  info.sigma_px = 3.0;
  GridF weight;
  if (modulation) {
    weight = *modulation;
    for (auto& b : weight.data) b = b * b;
  }
  abs_phase = smooth_local_poly(abs_phase, mask, info.sigma_px, 7, 3,
                                modulation ? &weight : nullptr);
  size_t before = count_valid(mask);
  mask = erode_mask(mask, kDenoiseTrimPx);
  info.trimmed_boundary = before - count_valid(mask);
  return info;
}

// Frames-to-absolute-phase pipeline: phase shifting, marker anchoring,
// order propagation, and noise-gated smoothing of the absolute map.
struct PhasePipeline {
  PhaseMaps maps;         // raw unwrapped state (absolute = 2*pi*k + wrapped)
  GridF absolute;         // denoised when the frames carry noise
  GridF modulation;       // fringe modulation amplitude per pixel
  MarkerRegion marker;
  DenoiseInfo denoise;
  size_t unreachable = 0;
};

inline PhasePipeline analyze_frames(const std::vector<GridF>& frames,
                                    double threshold = kModulationThreshold) {
  WrappedPhase psi = phase_shift_wrapped(frames, threshold);
  PhasePipeline out;
  out.marker = detect_marker(psi.mean);
  UnwrapResult unwrap = unwrap_orders(psi.wrapped, psi.mask, out.marker);
  out.unreachable = unwrap.unreachable;
  out.maps.wrapped = std::move(psi.wrapped);
  out.maps.order_k = std::move(unwrap.order_k);
  out.maps.modulation_mask = std::move(unwrap.mask);
  out.maps.absolute =
      absolute_phase(out.maps.wrapped, out.maps.order_k, out.maps.modulation_mask);
  out.absolute = out.maps.absolute;
  out.modulation = std::move(psi.modulation);
  out.denoise = denoise_absolute_phase(out.absolute, out.maps.modulation_mask, frames,
                                       &out.modulation);
  return out;
}

inline std::vector<GridF> frame_pixels(const std::vector<FringeImage>& images) {
  std::vector<GridF> frames;
  frames.reserve(images.size());
  for (const auto& im : images) frames.push_back(im.pixels);
  return frames;
}

inline WrappedPhase phase_shift_wrapped(const std::vector<FringeImage>& images,
                                        double threshold = kModulationThreshold) {
  return phase_shift_wrapped(frame_pixels(images), threshold);
}

}  // namespace spicalib::phase
