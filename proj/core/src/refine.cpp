#include "dff/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dff/error.hpp"

namespace dff {
namespace {

// Summed-area table with a zero row and column in front.
class Integral {
 public:
  Integral(std::size_t h, std::size_t w) : h_(h), w_(w), sums_((h + 1) * (w + 1), 0.0) {}

  template <typename F>
  void fill(F value) {
    for (std::size_t y = 0; y < h_; ++y) {
      double row = 0.0;
      for (std::size_t x = 0; x < w_; ++x) {
        row += value(y, x);
        sums_[(y + 1) * (w_ + 1) + x + 1] = sums_[y * (w_ + 1) + x + 1] + row;
      }
    }
  }

  double box_sum(std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) const {
    const std::size_t s = w_ + 1;
    return sums_[(y1 + 1) * s + x1 + 1] - sums_[y0 * s + x1 + 1] - sums_[(y1 + 1) * s + x0] + sums_[y0 * s + x0];
  }

 private:
  std::size_t h_, w_;
  std::vector<double> sums_;
};

struct Window {
  std::size_t y0, x0, y1, x1;
  double count() const { return static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1)); }
};

Window clamp_window(std::size_t y, std::size_t x, std::size_t r, std::size_t h, std::size_t w) {
  return {y >= r ? y - r : 0, x >= r ? x - r : 0, std::min(h - 1, y + r), std::min(w - 1, x + r)};
}

void softmax_inplace(std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& v : logits) {
    v = std::exp(v - m);
    z += v;
  }
  for (double& v : logits) v /= z;
}

void check_same_size(const Grid& a, const Grid& b, const char* what) {
  if (a.height != b.height || a.width != b.width) throw Error(ErrorCode::SizeMismatch, what);
}

}  // namespace

void RefineConfig::validate() const {
  if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "refine iterations must be >= 0");
  if (radius < 1) throw Error(ErrorCode::InvalidArgument, "guided filter radius must be >= 1");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "guided filter epsilon must be > 0");
  if (!(pairwise_weight >= 0.0)) throw Error(ErrorCode::InvalidArgument, "pairwise weight must be >= 0");
  if (background_level && !std::isfinite(*background_level))
    throw Error(ErrorCode::InvalidArgument, "background level must be finite");
}

Grid luma_guide(const RgbImage& image) {
  Grid g(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(y, x);
      g.at(y, x) = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0);
    }
  return g;
}

Grid guided_filter(const Grid& guide, const Grid& src, int radius, double epsilon) {
  check_same_size(guide, src, "guide and source differ in size");
  if (radius < 1) throw Error(ErrorCode::InvalidArgument, "radius must be >= 1");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be > 0");
  const std::size_t h = guide.height, w = guide.width;
  const auto r = static_cast<std::size_t>(radius);

  Integral sum_i(h, w), sum_p(h, w), sum_ip(h, w), sum_ii(h, w);
  sum_i.fill([&](auto y, auto x) { return static_cast<double>(guide.at(y, x)); });
  sum_p.fill([&](auto y, auto x) { return static_cast<double>(src.at(y, x)); });
  sum_ip.fill([&](auto y, auto x) { return static_cast<double>(guide.at(y, x)) * src.at(y, x); });
  sum_ii.fill([&](auto y, auto x) { return static_cast<double>(guide.at(y, x)) * guide.at(y, x); });

  std::vector<double> a(h * w), b(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Window win = clamp_window(y, x, r, h, w);
      const double n = win.count();
      const double mi = sum_i.box_sum(win.y0, win.x0, win.y1, win.x1) / n;
      const double mp = sum_p.box_sum(win.y0, win.x0, win.y1, win.x1) / n;
      const double cov = sum_ip.box_sum(win.y0, win.x0, win.y1, win.x1) / n - mi * mp;
      const double var = sum_ii.box_sum(win.y0, win.x0, win.y1, win.x1) / n - mi * mi;
      const double ak = cov / (var + epsilon);
      a[y * w + x] = ak;
      b[y * w + x] = mp - ak * mi;
    }

  Integral sum_a(h, w), sum_b(h, w);
  sum_a.fill([&](auto y, auto x) { return a[y * w + x]; });
  sum_b.fill([&](auto y, auto x) { return b[y * w + x]; });

  Grid q(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Window win = clamp_window(y, x, r, h, w);
      const double n = win.count();
      const double ma = sum_a.box_sum(win.y0, win.x0, win.y1, win.x1) / n;
      const double mb = sum_b.box_sum(win.y0, win.x0, win.y1, win.x1) / n;
      q.at(y, x) = static_cast<float>(ma * guide.at(y, x) + mb);
    }
  return q;
}

std::vector<Grid> softmax_unary(const HeatMapStack& stack, double background_level, double scale) {
  if (stack.k() == 0) throw Error(ErrorCode::InvalidArgument, "empty heat map stack");
  const double inv = scale > 0.0 ? 1.0 / scale : 1.0;
  const std::size_t k = stack.k();
  std::vector<Grid> out(k + 1, Grid(stack.height, stack.width));
  std::vector<double> logits(k + 1);
  const std::size_t n = stack.height * stack.width;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t j = 0; j < k; ++j) {
      const float v = stack.maps[j].values[p];
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "heat map value is not finite");
      logits[j] = v * inv;
    }
    logits[k] = background_level;
    softmax_inplace(logits);
    for (std::size_t j = 0; j <= k; ++j) out[j].values[p] = static_cast<float>(logits[j]);
  }
  return out;
}

std::vector<Grid> softmax_unary(const HeatMapStack& stack, double background_level) {
  return softmax_unary(stack, background_level, stack.max_value());
}

double set_max(std::span<const HeatMapStack> stacks) {
  float m = 0.0f;
  for (const auto& s : stacks) m = std::max(m, s.max_value());
  return m > 0.0f ? m : 1.0;
}

double default_background_level(std::span<const HeatMapStack> stacks) {
  std::vector<float> values;
  for (const auto& s : stacks)
    for (const auto& g : s.maps) values.insert(values.end(), g.values.begin(), g.values.end());
  if (values.empty()) throw Error(ErrorCode::EmptySet, "no heat map values");
  const std::size_t rank = (values.size() + 1) / 2;  // ceil(0.5 n)
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1] / set_max(stacks);
}

HeatMapStack meanfield_refine_image(const HeatMapStack& stack, const Grid& guide, const RefineConfig& cfg,
                                    double scale, double background_level, const MeanFieldObserver& observer) {
  cfg.validate();
  if (stack.height != guide.height || stack.width != guide.width)
    throw Error(ErrorCode::SizeMismatch, "heat maps of '" + stack.image_id + "' are not at guide resolution");
  for (const auto& g : stack.maps) check_same_size(g, guide, "heat map grid does not match guide");

  const std::vector<Grid> unary = softmax_unary(stack, background_level, scale);
  std::vector<Grid> q = unary;
  if (observer) observer(0, q);

  if (cfg.pairwise_weight > 0.0 && cfg.iterations > 0) {
    const std::size_t channels = unary.size();
    const std::size_t n = guide.height * guide.width;
    std::vector<double> log_u(channels * n);
    for (std::size_t j = 0; j < channels; ++j)
      for (std::size_t p = 0; p < n; ++p)
        log_u[j * n + p] = std::log(std::max(static_cast<double>(unary[j].values[p]),
                                             std::numeric_limits<double>::min()));

    std::vector<Grid> filtered(channels);
    std::vector<double> logits(channels);
    for (int it = 1; it <= cfg.iterations; ++it) {
      for (std::size_t j = 0; j < channels; ++j) filtered[j] = guided_filter(guide, q[j], cfg.radius, cfg.epsilon);
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t j = 0; j < channels; ++j)
          logits[j] = log_u[j * n + p] + cfg.pairwise_weight * filtered[j].values[p];
        softmax_inplace(logits);
        for (std::size_t j = 0; j < channels; ++j) q[j].values[p] = static_cast<float>(logits[j]);
      }
      if (observer) observer(it, q);
    }
  }

  HeatMapStack out{stack.image_id, stack.height, stack.width, {}};
  out.maps.assign(q.begin(), q.end() - 1);
  return out;
}

std::vector<HeatMapStack> meanfield_refine(std::span<const HeatMapStack> stacks, std::span<const Grid> guides,
                                           const RefineConfig& cfg, const MeanFieldObserver& observer) {
  if (stacks.size() != guides.size()) throw Error(ErrorCode::SizeMismatch, "one guide per heat map stack is required");
  cfg.validate();
  const double scale = set_max(stacks);
  const double bg = cfg.background_level ? *cfg.background_level : default_background_level(stacks);
  std::vector<HeatMapStack> out;
  out.reserve(stacks.size());
  for (std::size_t i = 0; i < stacks.size(); ++i)
    out.push_back(meanfield_refine_image(stacks[i], guides[i], cfg, scale, bg, observer));
  return out;
}

}  // namespace dff
