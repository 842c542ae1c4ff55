#pragma once

// Plain-text instance files. Every real number is written with 17
// significant digits so a write/read round trip is bit-exact.
//
//   sq-instance 1
//   generator <name>
//   seed <u64>
//   version <tag>
//   dims <H> <S> <A> <d> <terminal>
//   noise <none|bounded> <half_width>
//   start <S values>
//   phi        H*S*A rows of d values
//   mu <0|1>   H*d rows of S values when present
//   reward_w <0|1>  H rows of d values when present
//   reward     H*S rows of A values
//   trans      H*S*A rows of S values
//   verification <rest of line>
//   end

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "sq/errors.hpp"
#include "sq/mdp.hpp"

namespace sq {

inline constexpr const char* kInstanceMagic = "sq-instance";
inline constexpr int kInstanceFormatVersion = 1;

namespace detail {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_row(std::ostream& os, const double* p, int n) {
  for (int i = 0; i < n; ++i) os << (i ? " " : "") << fmt17(p[i]);
  os << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::string word() {
    std::string w;
    if (!(is_ >> w)) throw FormatError("instance: unexpected end of file");
    return w;
  }
  void expect(const std::string& key) {
    const std::string w = word();
    if (w != key) throw FormatError("instance: expected '" + key + "', found '" + w + "'");
  }
  double real() {
    const std::string w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') throw FormatError("instance: bad number '" + w + "'");
    return v;
  }
  long long integer() {
    const std::string w = word();
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(w, &pos);
    } catch (const std::exception&) {
      throw FormatError("instance: bad integer '" + w + "'");
    }
    if (pos != w.size()) throw FormatError("instance: bad integer '" + w + "'");
    return v;
  }
  std::uint64_t u64() {
    const std::string w = word();
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(w, &pos);
      if (pos == w.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError("instance: bad unsigned integer '" + w + "'");
  }
  std::string rest_of_line() {
    std::string line;
    std::getline(is_, line);
    const auto first = line.find_first_not_of(' ');
    return first == std::string::npos ? std::string() : line.substr(first);
  }

 private:
  std::istream& is_;
};

}  // namespace detail

inline void write_instance(std::ostream& os, const LowRankMdp& m) {
  os << kInstanceMagic << ' ' << kInstanceFormatVersion << '\n';
  os << "generator " << (m.meta.generator.empty() ? "-" : m.meta.generator) << '\n';
  os << "seed " << m.meta.seed << '\n';
  os << "version " << (m.meta.version.empty() ? "-" : m.meta.version) << '\n';
  os << "dims " << m.H << ' ' << m.S << ' ' << m.A << ' ' << m.d << ' ' << m.terminal << '\n';
  os << "noise " << (m.noise.kind == RewardNoise::Kind::none ? "none" : "bounded") << ' '
     << detail::fmt17(m.noise.half_width) << '\n';
  os << "start ";
  detail::write_row(os, m.start.data(), m.S);
  os << "phi\n";
  for (const Vec& f : m.phi) detail::write_row(os, f.data(), m.d);
  os << "mu " << (m.mu.empty() ? 0 : 1) << '\n';
  for (const Mat& mu : m.mu)
    for (int z = 0; z < m.d; ++z) {
      const Vec row = mu.row(z).transpose();
      detail::write_row(os, row.data(), m.S);
    }
  os << "reward_w " << (m.reward_w.empty() ? 0 : 1) << '\n';
  for (const Vec& w : m.reward_w) detail::write_row(os, w.data(), m.d);
  os << "reward\n";
  for (std::size_t i = 0; i < m.reward.size(); i += m.A) detail::write_row(os, m.reward.data() + i, m.A);
  os << "trans\n";
  for (std::size_t i = 0; i < m.trans.size(); i += m.S) detail::write_row(os, m.trans.data() + i, m.S);
  os << "verification " << m.meta.verification << '\n';
  os << "end\n";
}

inline std::string instance_text(const LowRankMdp& m) {
  std::ostringstream os;
  write_instance(os, m);
  return os.str();
}

inline LowRankMdp read_instance(std::istream& is) {
  detail::Reader r(is);
  r.expect(kInstanceMagic);
  const long long ver = r.integer();
  if (ver != kInstanceFormatVersion) throw FormatError("instance: unsupported format version " + std::to_string(ver));
  LowRankMdp m;
  r.expect("generator");
  m.meta.generator = r.word();
  if (m.meta.generator == "-") m.meta.generator.clear();
  r.expect("seed");
  m.meta.seed = r.u64();
  r.expect("version");
  m.meta.version = r.word();
  if (m.meta.version == "-") m.meta.version.clear();
  r.expect("dims");
  const long long H = r.integer(), S = r.integer(), A = r.integer(), d = r.integer(), term = r.integer();
  if (H < 1 || S < 1 || A < 1 || d < 1 || term < -1 || term >= S || H * S * A * S > (1LL << 31))
    throw FormatError("instance: invalid dimensions");
  m.allocate(static_cast<int>(H), static_cast<int>(S), static_cast<int>(A), static_cast<int>(d));
  m.terminal = static_cast<int>(term);
  r.expect("noise");
  const std::string kind = r.word();
  if (kind == "none")
    m.noise.kind = RewardNoise::Kind::none;
  else if (kind == "bounded")
    m.noise.kind = RewardNoise::Kind::bounded;
  else
    throw FormatError("instance: unknown noise kind '" + kind + "'");
  m.noise.half_width = r.real();
  r.expect("start");
  for (int s = 0; s < m.S; ++s) m.start(s) = r.real();
  r.expect("phi");
  for (Vec& f : m.phi)
    for (int i = 0; i < m.d; ++i) f(i) = r.real();
  r.expect("mu");
  if (r.integer() != 0) {
    m.mu.assign(m.H, Mat::Zero(m.d, m.S));
    for (Mat& mu : m.mu)
      for (int z = 0; z < m.d; ++z)
        for (int s = 0; s < m.S; ++s) mu(z, s) = r.real();
  }
  r.expect("reward_w");
  if (r.integer() != 0) {
    m.reward_w.assign(m.H, Vec::Zero(m.d));
    for (Vec& w : m.reward_w)
      for (int i = 0; i < m.d; ++i) w(i) = r.real();
  }
  r.expect("reward");
  for (double& x : m.reward) x = r.real();
  r.expect("trans");
  for (double& x : m.trans) x = r.real();
  r.expect("verification");
  m.meta.verification = r.rest_of_line();
  r.expect("end");
  return m;
}

inline LowRankMdp load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open instance file '" + path + "'");
  return read_instance(in);
}

inline void save_instance(const std::string& path, const LowRankMdp& m) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write instance file '" + path + "'");
  write_instance(out, m);
  if (!out) throw FormatError("write failed for '" + path + "'");
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string instance_id(const LowRankMdp& m) { return hex64(fnv1a(instance_text(m))); }

}  // namespace sq
