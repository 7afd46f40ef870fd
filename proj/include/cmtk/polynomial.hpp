#pragma once

// Polynomial vector fields: sparse monomial representation, exact symbolic
// differentiation, and the plain-text file format accepted by the CLI.
//
// File format:
//   - first non-comment line: the dimension n
//   - one equation per block, one monomial per line: "coeff e1 e2 ... en"
//   - a blank line ends the current equation block
//   - lines starting with '#' are comments
// The file must define exactly n equations.

#include "cmtk/core.hpp"
#include "cmtk/system.hpp"

#include <fstream>
#include <memory>
#include <sstream>

namespace cmtk {

struct Monomial {
  double coeff = 0.0;
  std::vector<int> exponents;  // size n, entries >= 0
};

/// One polynomial in n variables as a sum of monomials.
using Polynomial = std::vector<Monomial>;

struct PolynomialSystem {
  int n = 0;
  std::vector<Polynomial> equations;  // size n
};

[[nodiscard]] inline double eval_monomial(const Monomial& m, const Eigen::Ref<const Vector>& x) {
  double v = m.coeff;
  for (std::size_t i = 0; i < m.exponents.size(); ++i) {
    const int e = m.exponents[i];
    for (int k = 0; k < e; ++k) v *= x[static_cast<Eigen::Index>(i)];
  }
  return v;
}

[[nodiscard]] inline double eval_polynomial(const Polynomial& p, const Eigen::Ref<const Vector>& x) {
  double v = 0.0;
  for (const auto& m : p) v += eval_monomial(m, x);
  return v;
}

/// Exact partial derivative d/dx_j of a polynomial.
[[nodiscard]] inline Polynomial differentiate(const Polynomial& p, int j) {
  Polynomial out;
  for (const auto& m : p) {
    const int e = m.exponents[static_cast<std::size_t>(j)];
    if (e == 0) continue;
    Monomial d = m;
    d.coeff *= static_cast<double>(e);
    d.exponents[static_cast<std::size_t>(j)] = e - 1;
    out.push_back(std::move(d));
  }
  return out;
}

/// Parse the monomial format. `expected_equations` overrides the default
/// requirement of one equation per dimension (matrix-valued grids store n*n
/// equations of n variables).
[[nodiscard]] inline PolynomialSystem parse_polynomial_text(std::istream& in,
                                                            const std::string& origin,
                                                            int expected_equations = -1) {
  PolynomialSystem ps;
  std::string line;
  bool have_dim = false;
  Polynomial current;
  bool block_open = false;
  auto flush_block = [&] {
    if (!block_open) return;
    ps.equations.push_back(current);
    current.clear();
    block_open = false;
  };
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    if (!have_dim) {
      std::string tok;
      if (!(ls >> tok)) continue;  // skip leading blanks/comments
      std::size_t used = 0;
      int n = 0;
      try {
        n = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      std::string rest;
      if (used != tok.size() || n <= 0 || (ls >> rest))
        throw error(errc::config, origin + ":" + std::to_string(line_no) +
                                      ": expected the dimension n on the first line");
      ps.n = n;
      have_dim = true;
      continue;
    }
    double coeff = 0.0;
    if (!(ls >> coeff)) {  // blank line: equation separator
      flush_block();
      continue;
    }
    Monomial m;
    m.coeff = coeff;
    m.exponents.resize(static_cast<std::size_t>(ps.n));
    for (int i = 0; i < ps.n; ++i) {
      int e = 0;
      if (!(ls >> e) || e < 0)
        throw error(errc::config, origin + ":" + std::to_string(line_no) +
                                      ": expected " + std::to_string(ps.n) +
                                      " nonnegative exponents after the coefficient");
      m.exponents[static_cast<std::size_t>(i)] = e;
    }
    std::string extra;
    if (ls >> extra)
      throw error(errc::config,
                  origin + ":" + std::to_string(line_no) + ": trailing tokens after monomial");
    current.push_back(std::move(m));
    block_open = true;
  }
  flush_block();
  if (!have_dim) throw error(errc::config, origin + ": empty polynomial system file");
  const int expected = expected_equations < 0 ? ps.n : expected_equations;
  if (static_cast<int>(ps.equations.size()) != expected)
    throw error(errc::config, origin + ": expected " + std::to_string(expected) +
                                  " equations, found " + std::to_string(ps.equations.size()));
  return ps;
}

[[nodiscard]] inline PolynomialSystem parse_polynomial_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw error(errc::config, "cannot open polynomial system file: " + path);
  return parse_polynomial_text(in, path);
}

/// Wrap a polynomial system as a SystemDef with exact symbolic Jacobian.
[[nodiscard]] inline SystemDef make_polynomial_system(const PolynomialSystem& ps,
                                                      std::string name = "poly") {
  if (ps.n <= 0 || static_cast<int>(ps.equations.size()) != ps.n)
    throw error(errc::config, "make_polynomial_system: inconsistent dimensions");
  auto jac_entries = std::make_shared<std::vector<std::vector<Polynomial>>>();
  jac_entries->resize(static_cast<std::size_t>(ps.n));
  for (int i = 0; i < ps.n; ++i) {
    (*jac_entries)[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(ps.n));
    for (int j = 0; j < ps.n; ++j)
      (*jac_entries)[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          differentiate(ps.equations[static_cast<std::size_t>(i)], j);
  }
  auto eqs = std::make_shared<std::vector<Polynomial>>(ps.equations);
  SystemDef sys;
  sys.n = ps.n;
  sys.name = std::move(name);
  sys.rhs = [eqs](const Eigen::Ref<const Vector>& x, Eigen::Ref<Vector> dy) {
    for (std::size_t i = 0; i < eqs->size(); ++i)
      dy[static_cast<Eigen::Index>(i)] = eval_polynomial((*eqs)[i], x);
  };
  sys.jac = [jac_entries](const Eigen::Ref<const Vector>& x, Eigen::Ref<Matrix> j) {
    const auto& rows = *jac_entries;
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows.size(); ++c)
        j(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            eval_polynomial(rows[r][c], x);
  };
  return sys;
}

}  // namespace cmtk
