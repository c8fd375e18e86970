#include "desksplat/segment.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

namespace desksplat {

Assignment assign_exhaustive(const Eigen::MatrixXd& cost, double tie_tolerance) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("assignment cost must be square");
  Assignment best;
  best.cost = std::numeric_limits<double>::infinity();
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    double c = 0;
    for (int k = 0; k < n; ++k) c += cost(k, perm[static_cast<size_t>(k)]);
    if (c < best.cost - tie_tolerance) {
      best.perm = perm;
      best.cost = c;
      best.tie = false;
    } else if (std::abs(c - best.cost) <= tie_tolerance) {
      best.tie = true;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (n == 0) best.cost = 0;
  return best;
}

Assignment assign_hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw std::invalid_argument("assignment cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; way[j] is the previous column on the augmenting path.
  std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(n) + 1, 0);
  std::vector<int> match(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment out;
  out.perm.assign(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j) out.perm[static_cast<size_t>(match[static_cast<size_t>(j)] - 1)] = j - 1;
  for (int k = 0; k < n; ++k) out.cost += cost(k, out.perm[static_cast<size_t>(k)]);
  return out;
}

MaskRaster permute_channels(const MaskRaster& masks, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != masks.channels) throw std::invalid_argument("permutation size differs from channel count");
  std::vector<char> seen(perm.size(), 0);
  for (int c : perm) {
    if (c < 0 || c >= masks.channels || seen[static_cast<size_t>(c)]) throw std::invalid_argument("not a permutation");
    seen[static_cast<size_t>(c)] = 1;
  }
  MaskRaster out(masks.height, masks.width, masks.channels);
  for (size_t p = 0; p < masks.pixels(); ++p)
    for (int k = 0; k < masks.channels; ++k) out.pixel(p)[k] = masks.pixel(p)[perm[static_cast<size_t>(k)]];
  return out;
}

namespace {

constexpr char kInstanceMagic[4] = {'D', 'G', 'I', 'S'};
constexpr uint32_t kInstanceVersion = 1;

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Cursor {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  template <typename T>
  T get() {
    if (pos + sizeof(T) > b.size()) throw InstanceFormatError("instance file truncated");
    T v;
    std::memcpy(&v, b.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

}  // namespace

std::vector<uint8_t> encode_instances(const InstanceSet& inst, int feature_dim) {
  if (!inst.representatives.empty() && inst.representatives.size() != inst.sets.size())
    throw std::invalid_argument("one representative per instance required");
  std::vector<uint8_t> out(kInstanceMagic, kInstanceMagic + 4);
  put<uint32_t>(out, kInstanceVersion);
  put<uint32_t>(out, static_cast<uint32_t>(inst.sets.size()));
  put<uint32_t>(out, static_cast<uint32_t>(feature_dim));
  for (size_t k = 0; k < inst.sets.size(); ++k) {
    put<uint32_t>(out, static_cast<uint32_t>(inst.sets[k].size()));
    for (int i : inst.sets[k]) put<uint32_t>(out, static_cast<uint32_t>(i));
    for (int d = 0; d < feature_dim; ++d)
      put<float>(out, inst.representatives.empty() || d >= inst.representatives[k].size() ? 0.0f : static_cast<float>(inst.representatives[k][d]));
    const std::string label = k < inst.labels.size() ? inst.labels[k] : std::string();
    put<uint32_t>(out, static_cast<uint32_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
  }
  return out;
}

InstanceSet decode_instances(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kInstanceMagic, 4) != 0) throw InstanceFormatError("not an instance file (bad magic)");
  Cursor c{bytes, 4};
  if (const uint32_t v = c.get<uint32_t>(); v != kInstanceVersion) throw InstanceFormatError("unsupported instance file version " + std::to_string(v));
  const uint32_t ns = c.get<uint32_t>(), dim = c.get<uint32_t>();
  InstanceSet inst;
  for (uint32_t k = 0; k < ns; ++k) {
    const uint32_t count = c.get<uint32_t>();
    if (count > bytes.size()) throw InstanceFormatError("instance file truncated");
    std::vector<int> set(count);
    for (auto& i : set) i = static_cast<int>(c.get<uint32_t>());
    Eigen::VectorXd rep(dim);
    for (uint32_t d = 0; d < dim; ++d) rep[d] = c.get<float>();
    const uint32_t len = c.get<uint32_t>();
    if (c.pos + len > bytes.size()) throw InstanceFormatError("instance file truncated");
    inst.labels.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos), bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + len));
    c.pos += len;
    inst.sets.push_back(std::move(set));
    inst.representatives.push_back(std::move(rep));
  }
  if (c.pos != bytes.size()) throw InstanceFormatError("trailing bytes in instance file");
  return inst;
}

void save_instances(const std::string& path, const InstanceSet& inst, int feature_dim) {
  const auto bytes = encode_instances(inst, feature_dim);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InstanceFormatError("cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

InstanceSet load_instances(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InstanceFormatError("cannot open " + path);
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_instances(bytes);
}

}  // namespace desksplat
