#pragma once

// Parameter file, all integers and floats little-endian:
//
//   char[8]  magic "GHRLPRM1"
//   u32      format version (1)
//   u64      goal-ordering checksum of the grid
//   i32 i32  grid rows, cols
//   u32      approximator count
//   per approximator:
//     u8     backend (0 table, 1 network)
//     u32    head width
//     u64    update count
//     table:   u32 block count, per block {u32 size, u8 one_hot, u32 name length, name bytes},
//              u32 rows, u32 outputs, f64 values row-major
//     network: u32 size count, u32 sizes..., per layer f64 weights column-major then f64 biases
//
// Loading checks the checksum against the expected grid so a level-0 model
// trained on one geometry cannot be silently reused on another.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gesture_core.hpp"
#include "value_backend.hpp"

namespace ghrl {

inline constexpr std::uint32_t kParamFormatVersion = 1;
inline constexpr std::array<char, 8> kParamMagic = {'G', 'H', 'R', 'L', 'P', 'R', 'M', '1'};

class param_format_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class checksum_error : public param_format_error {
public:
  using param_format_error::param_format_error;
};

struct ParameterFile {
  GridGeometry geometry;
  std::uint64_t checksum = 0;
  std::vector<QApproximator> approximators;
};

namespace detail {

class LeWriter {
public:
  explicit LeWriter(std::ostream& os) : os_(os) {}
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) os_.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void f64(double d) { uint(std::bit_cast<std::uint64_t>(d)); }
  void bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }

private:
  std::ostream& os_;
};

class LeReader {
public:
  explicit LeReader(std::istream& is) : is_(is) {}
  template <typename U>
  U uint() {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      const int c = is_.get();
      if (c == EOF) throw param_format_error("parameter file truncated");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<U>(v);
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    if (!is_.read(s.data(), static_cast<std::streamsize>(n))) throw param_format_error("parameter file truncated");
    return s;
  }

private:
  std::istream& is_;
};

}  // namespace detail

inline void write_parameters(std::ostream& os, const GridGeometry& g, const std::vector<QApproximator>& approx) {
  detail::LeWriter w(os);
  w.bytes(kParamMagic.data(), kParamMagic.size());
  w.uint<std::uint32_t>(kParamFormatVersion);
  w.uint<std::uint64_t>(goal_ordering_checksum(g));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(g.rows));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(g.cols));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(approx.size()));
  for (const auto& q : approx) {
    w.uint<std::uint8_t>(q.backend() == Backend::Table ? 0 : 1);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(q.head_width()));
    w.uint<std::uint64_t>(q.update_count());
    if (q.backend() == Backend::Table) {
      const auto& blocks = q.layout()->blocks();
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(blocks.size()));
      for (const auto& b : blocks) {
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(b.size));
        w.uint<std::uint8_t>(b.one_hot ? 1 : 0);
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(b.name.size()));
        w.bytes(b.name.data(), b.name.size());
      }
      const auto& t = q.table_values();
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
      for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) w.f64(t(r, c));
    } else {
      const auto& net = q.mlp();
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(net.sizes().size()));
      for (std::size_t s : net.sizes()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(s));
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& W = net.weight(l);
        for (Eigen::Index i = 0; i < W.size(); ++i) w.f64(W.data()[i]);
        const auto& b = net.bias(l);
        for (Eigen::Index i = 0; i < b.size(); ++i) w.f64(b(i));
      }
    }
  }
}

inline ParameterFile read_parameters(std::istream& is) {
  detail::LeReader r(is);
  const std::string magic = r.bytes(kParamMagic.size());
  if (std::memcmp(magic.data(), kParamMagic.data(), kParamMagic.size()) != 0)
    throw param_format_error("not a parameter file (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kParamFormatVersion)
    throw param_format_error("unsupported parameter format version " + std::to_string(version));
  ParameterFile pf;
  pf.checksum = r.uint<std::uint64_t>();
  const auto rows = static_cast<int>(r.uint<std::uint32_t>());
  const auto cols = static_cast<int>(r.uint<std::uint32_t>());
  pf.geometry = GridGeometry(rows, cols);
  const auto count = r.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto backend = r.uint<std::uint8_t>();
    const auto head_width = r.uint<std::uint32_t>();
    const auto updates = r.uint<std::uint64_t>();
    if (backend == 0) {
      auto layout = std::make_shared<FeatureLayout>();
      const auto blocks = r.uint<std::uint32_t>();
      for (std::uint32_t b = 0; b < blocks; ++b) {
        const auto size = r.uint<std::uint32_t>();
        const bool one_hot = r.uint<std::uint8_t>() != 0;
        const auto len = r.uint<std::uint32_t>();
        layout->add(r.bytes(len), size, one_hot);
      }
      const auto trows = r.uint<std::uint32_t>();
      const auto tcols = r.uint<std::uint32_t>();
      auto q = QApproximator::table(layout, tcols, head_width);
      if (static_cast<std::uint32_t>(q.table_values().rows()) != trows)
        throw param_format_error("table row count does not match its layout");
      for (std::uint32_t i = 0; i < trows; ++i)
        for (std::uint32_t j = 0; j < tcols; ++j) q.table_values()(i, j) = r.f64();
      q.set_update_count(updates);
      pf.approximators.push_back(std::move(q));
    } else if (backend == 1) {
      const auto nsizes = r.uint<std::uint32_t>();
      std::vector<std::size_t> sizes;
      for (std::uint32_t i = 0; i < nsizes; ++i) sizes.push_back(r.uint<std::uint32_t>());
      Rng dummy(0);
      Mlp net(sizes, dummy);
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        auto& W = net.weight(l);
        for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = r.f64();
        auto& b = net.bias(l);
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = r.f64();
      }
      auto q = QApproximator::from_mlp(std::move(net), head_width);
      q.set_update_count(updates);
      pf.approximators.push_back(std::move(q));
    } else {
      throw param_format_error("unknown backend tag " + std::to_string(backend));
    }
  }
  return pf;
}

inline void save_parameters(const std::string& path, const GridGeometry& g, const std::vector<QApproximator>& approx) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_parameters(os, g, approx);
  if (!os) throw std::runtime_error("write failed: " + path);
}

// Reads a parameter file and verifies that it was produced for `expected`.
inline std::vector<QApproximator> load_parameters(const std::string& path, const GridGeometry& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open parameter file " + path);
  ParameterFile pf = read_parameters(is);
  if (pf.checksum != goal_ordering_checksum(expected) || !(pf.geometry == expected)) {
    std::ostringstream msg;
    msg << "goal-ordering checksum mismatch: file " << path << " was written for a " << pf.geometry.rows << "x"
        << pf.geometry.cols << " grid, expected " << expected.rows << "x" << expected.cols;
    throw checksum_error(msg.str());
  }
  return std::move(pf.approximators);
}

}  // namespace ghrl
