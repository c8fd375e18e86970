#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace desksplat {

/// Piecewise weight over iterations given by knots (iteration, value). Linear schedules interpolate
/// between knots; step schedules hold each knot's value until the next knot. Both clamp outside.
class Schedule {
 public:
  enum class Kind { Linear, Step };

  Schedule() = default;
  Schedule(double constant) : knots_{{0, constant}} { check(); }  // NOLINT(google-explicit-constructor)
  Schedule(Kind kind, std::vector<std::pair<int, double>> knots) : kind_(kind), knots_(std::move(knots)) { check(); }

  static Schedule linear(std::vector<std::pair<int, double>> knots) { return {Kind::Linear, std::move(knots)}; }
  static Schedule step(std::vector<std::pair<int, double>> knots) { return {Kind::Step, std::move(knots)}; }

  double operator()(int iter) const {
    if (knots_.empty()) return 0.0;
    if (iter <= knots_.front().first) return knots_.front().second;
    if (iter >= knots_.back().first) return knots_.back().second;
    const auto hi = std::upper_bound(knots_.begin(), knots_.end(), iter, [](int i, const auto& k) { return i < k.first; });
    const auto lo = hi - 1;
    if (kind_ == Kind::Step) return lo->second;
    const double t = double(iter - lo->first) / double(hi->first - lo->first);
    return lo->second + t * (hi->second - lo->second);
  }

  Kind kind() const { return kind_; }
  const std::vector<std::pair<int, double>>& knots() const { return knots_; }

  /// "0.1", "linear 0:500 100:500 400:1000" or "step 0:0.1 100:0.01".
  static Schedule parse(const std::string& text);
  std::string to_string() const;

 private:
  void check() const {
    for (size_t i = 0; i < knots_.size(); ++i) {
      if (!(knots_[i].second >= 0.0)) throw std::invalid_argument("schedule weights must be non-negative");
      if (i > 0 && knots_[i].first <= knots_[i - 1].first) throw std::invalid_argument("schedule knots must increase");
    }
  }

  Kind kind_ = Kind::Step;
  std::vector<std::pair<int, double>> knots_;
};

}  // namespace desksplat
