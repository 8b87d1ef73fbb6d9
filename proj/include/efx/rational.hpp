#pragma once

// Exact rational arithmetic for Game of 24: division legitimately produces
// fractions, and "equals 24" must be checked exactly.

#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>

namespace efx {

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n) : num(n), den(1) {}  // NOLINT(google-explicit-constructor)
  Rational(std::int64_t n, std::int64_t d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den == 0) throw std::domain_error("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
  bool operator!=(const Rational& o) const { return !(*this == o); }
  bool operator<(const Rational& o) const {
    return static_cast<__int128>(num) * o.den < static_cast<__int128>(o.num) * den;
  }

  Rational operator+(const Rational& o) const {
    return Rational(num * o.den + o.num * den, den * o.den);
  }
  Rational operator-(const Rational& o) const {
    return Rational(num * o.den - o.num * den, den * o.den);
  }
  Rational operator*(const Rational& o) const {
    return Rational(num * o.num, den * o.den);
  }
  std::optional<Rational> divided_by(const Rational& o) const {
    if (o.num == 0) return std::nullopt;
    return Rational(num * o.den, den * o.num);
  }

  bool is_integer() const { return den == 1; }

  std::string str() const {
    return is_integer() ? std::to_string(num)
                        : std::to_string(num) + "/" + std::to_string(den);
  }

  static std::optional<Rational> parse(const std::string& s) {
    try {
      std::size_t pos = 0;
      std::int64_t n = std::stoll(s, &pos);
      if (pos == s.size()) return Rational(n);
      if (s[pos] == '/') {
        std::size_t pos2 = 0;
        std::int64_t d = std::stoll(s.substr(pos + 1), &pos2);
        if (pos + 1 + pos2 == s.size() && d != 0) return Rational(n, d);
      }
    } catch (const std::exception&) {
    }
    return std::nullopt;
  }
};

}  // namespace efx
