#include "coar/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <memory>
#include <stdexcept>

namespace coar::ag {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
using ArrC = Eigen::Map<const Eigen::ArrayXd>;
using Arr = Eigen::Map<Eigen::ArrayXd>;

MapC mat(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
Map mat(Tensor& t) { return Map(t.data(), t.rows(), t.cols()); }
ArrC arr(const Tensor& t) { return ArrC(t.data(), static_cast<Eigen::Index>(t.size())); }
Arr arr(Tensor& t) { return Arr(t.data(), static_cast<Eigen::Index>(t.size())); }

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::logic_error("invalid Var");
  return *a.graph;
}

void same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw std::logic_error("Vars from different graphs");
}

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": size mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

bool needs(Graph& g, Var v) { return g.requires_grad(v); }

}  // namespace

Var matmul(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor out({A.rows(), B.cols()});
  mat(out).noalias() = mat(A) * mat(B);
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) mat(g.grad_buffer(a)).noalias() += mat(gy) * mat(b.value()).transpose();
    if (needs(g, b)) mat(g.grad_buffer(b)).noalias() += mat(a.value()).transpose() * mat(gy);
  });
}

Var matmul_nt(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) {
    throw ShapeError("matmul_nt: " + shape_string(A.shape()) + " x " + shape_string(B.shape()) + "^T");
  }
  Tensor out({A.rows(), B.rows()});
  mat(out).noalias() = mat(A) * mat(B).transpose();
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) mat(g.grad_buffer(a)).noalias() += mat(gy) * mat(b.value());
    if (needs(g, b)) mat(g.grad_buffer(b)).noalias() += mat(gy).transpose() * mat(a.value());
  });
}

Var matmul_tn(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rows() != B.rows()) {
    throw ShapeError("matmul_tn: " + shape_string(A.shape()) + "^T x " + shape_string(B.shape()));
  }
  Tensor out({A.cols(), B.cols()});
  mat(out).noalias() = mat(A).transpose() * mat(B);
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) mat(g.grad_buffer(a)).noalias() += mat(b.value()) * mat(gy).transpose();
    if (needs(g, b)) mat(g.grad_buffer(b)).noalias() += mat(a.value()) * mat(gy);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  Tensor out({A.cols(), A.rows()});
  mat(out) = mat(A).transpose();
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    mat(g.grad_buffer(a)) += mat(gy).transpose();
  });
}

Var add(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  require_same_size(a.value(), b.value(), "add");
  Tensor out = a.value();
  arr(out) += arr(b.value());
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) arr(g.grad_buffer(a)) += arr(gy);
    if (needs(g, b)) arr(g.grad_buffer(b)) += arr(gy);
  });
}

Var sub(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  require_same_size(a.value(), b.value(), "sub");
  Tensor out = a.value();
  arr(out) -= arr(b.value());
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) arr(g.grad_buffer(a)) += arr(gy);
    if (needs(g, b)) arr(g.grad_buffer(b)) -= arr(gy);
  });
}

Var mul(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  require_same_size(a.value(), b.value(), "mul");
  Tensor out = a.value();
  arr(out) *= arr(b.value());
  return g.record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) arr(g.grad_buffer(a)) += arr(gy) * arr(b.value());
    if (needs(g, b)) arr(g.grad_buffer(b)) += arr(gy) * arr(a.value());
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  arr(out) *= s;
  return g.record(std::move(out), {a}, [a, s](Graph& g, const Tensor& gy, const Tensor&) {
    arr(g.grad_buffer(a)) += s * arr(gy);
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  arr(out) += s;
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    arr(g.grad_buffer(a)) += arr(gy);
  });
}

Var add_row(Var a, Var row) {
  same_graph(a, row);
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (static_cast<int>(R.size()) != A.cols()) {
    throw ShapeError("add_row: row of " + std::to_string(R.size()) + " for " + shape_string(A.shape()));
  }
  Tensor out = A;
  const Eigen::Map<const Eigen::RowVectorXd> r(R.data(), A.cols());
  mat(out).rowwise() += r;
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, const Tensor& gy, const Tensor&) {
    if (needs(g, a)) arr(g.grad_buffer(a)) += arr(gy);
    if (needs(g, row)) {
      Tensor& gr = g.grad_buffer(row);
      Eigen::Map<Eigen::RowVectorXd>(gr.data(), gy.cols()) += mat(gy).colwise().sum();
    }
  });
}

Var mul_row(Var a, Var row) {
  same_graph(a, row);
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (static_cast<int>(R.size()) != A.cols()) {
    throw ShapeError("mul_row: row of " + std::to_string(R.size()) + " for " + shape_string(A.shape()));
  }
  Tensor out = A;
  const Eigen::Map<const Eigen::RowVectorXd> r(R.data(), A.cols());
  mat(out).array().rowwise() *= r.array();
  return g.record(std::move(out), {a, row}, [a, row](Graph& g, const Tensor& gy, const Tensor&) {
    const Tensor& R = row.value();
    const Eigen::Map<const Eigen::RowVectorXd> r(R.data(), gy.cols());
    if (needs(g, a)) mat(g.grad_buffer(a)).array() += mat(gy).array().rowwise() * r.array();
    if (needs(g, row)) {
      Tensor& gr = g.grad_buffer(row);
      Eigen::Map<Eigen::RowVectorXd>(gr.data(), gy.cols()) +=
          (mat(gy).array() * mat(a.value()).array()).colwise().sum().matrix();
    }
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  arr(out) = arr(out).max(0.0);
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    arr(g.grad_buffer(a)) += (arr(a.value()) > 0.0).select(arr(gy), 0.0);
  });
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& ga = g.grad_buffer(a);
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = std::exp(-0.5 * v * v) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      ga[i] += gy[i] * (cdf + v * pdf);
    }
  });
}

Var square(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  arr(out) = arr(out).square();
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    arr(g.grad_buffer(a)) += 2.0 * arr(gy) * arr(a.value());
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return g.record(Tensor({}, s), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    arr(g.grad_buffer(a)) += gy[0];
  });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  if (A.rows() == 0) throw ShapeError("mean_rows of empty tensor");
  Tensor out({1, A.cols()});
  mat(out) = mat(A).colwise().mean();
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& ga = g.grad_buffer(a);
    const double inv = 1.0 / ga.rows();
    const Eigen::Map<const Eigen::RowVectorXd> r(gy.data(), gy.cols());
    mat(ga).rowwise() += inv * r;
  });
}

Var col_max(Var a) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const int R = A.rows();
  const int C = A.cols();
  if (R == 0) throw ShapeError("col_max of empty tensor");
  Tensor out({1, C});
  std::vector<int> arg(static_cast<std::size_t>(C), 0);
  for (int c = 0; c < C; ++c) {
    double best = A.at(0, c);
    for (int r = 1; r < R; ++r) {
      if (A.at(r, c) > best) {
        best = A.at(r, c);
        arg[static_cast<std::size_t>(c)] = r;
      }
    }
    out[static_cast<std::size_t>(c)] = best;
  }
  return g.record(std::move(out), {a}, [a, arg](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t c = 0; c < arg.size(); ++c) ga.at(arg[c], static_cast<int>(c)) += gy[c];
  });
}


Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  auto m = mat(out);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor& y) {
    // dx = y * (gy - sum(gy * y)) per row
    const auto Y = mat(y).array();
    const auto G = mat(gy).array();
    const Eigen::VectorXd dot = (Y * G).rowwise().sum();
    mat(g.grad_buffer(a)).array() += Y * (G.colwise() - dot.array());
  });
}

Var softmax_cols(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  auto m = mat(out);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mx = m.col(c).maxCoeff();
    m.col(c) = (m.col(c).array() - mx).exp().matrix();
    m.col(c) /= m.col(c).sum();
  }
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor& y) {
    const auto Y = mat(y).array();
    const auto G = mat(gy).array();
    const Eigen::RowVectorXd dot = (Y * G).colwise().sum();
    mat(g.grad_buffer(a)).array() += Y * (G.rowwise() - dot.array());
  });
}

Var layer_norm_rows(Var a, double eps) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  Tensor out = A;
  const int R = A.rows();
  const int C = A.cols();
  std::vector<double> inv_std(static_cast<std::size_t>(R));
  auto m = mat(out);
  for (int r = 0; r < R; ++r) {
    const double mu = m.row(r).mean();
    m.row(r).array() -= mu;
    const double var = m.row(r).squaredNorm() / C;
    inv_std[static_cast<std::size_t>(r)] = 1.0 / std::sqrt(var + eps);
    m.row(r) *= inv_std[static_cast<std::size_t>(r)];
  }
  return g.record(std::move(out), {a}, [a, inv_std](Graph& g, const Tensor& gy, const Tensor& y) {
    // dx = inv_std * (gy - mean(gy) - y * mean(gy * y))
    auto ga = mat(g.grad_buffer(a));
    const auto Y = mat(y);
    const auto G = mat(gy);
    for (Eigen::Index r = 0; r < Y.rows(); ++r) {
      const double mg = G.row(r).mean();
      const double mgy = G.row(r).dot(Y.row(r)) / static_cast<double>(Y.cols());
      ga.row(r).array() +=
          inv_std[static_cast<std::size_t>(r)] * (G.row(r).array() - mg - Y.row(r).array() * mgy);
    }
  });
}

Var class_normalize(Var a, double eps) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  Tensor out = A;
  const int R = A.rows();
  const int C = A.cols();
  if (R == 0) throw ShapeError("class_normalize of empty tensor");
  std::vector<double> inv_std(static_cast<std::size_t>(C));
  auto m = mat(out);
  for (int c = 0; c < C; ++c) {
    const double mu = m.col(c).mean();
    m.col(c).array() -= mu;
    const double var = m.col(c).squaredNorm() / R;
    inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
    m.col(c) *= inv_std[static_cast<std::size_t>(c)];
  }
  return g.record(std::move(out), {a}, [a, inv_std](Graph& g, const Tensor& gy, const Tensor& y) {
    auto ga = mat(g.grad_buffer(a));
    const auto Y = mat(y);
    const auto G = mat(gy);
    const double n = static_cast<double>(Y.rows());
    for (Eigen::Index c = 0; c < Y.cols(); ++c) {
      const double mg = G.col(c).sum() / n;
      const double mgy = G.col(c).dot(Y.col(c)) / n;
      ga.col(c).array() +=
          inv_std[static_cast<std::size_t>(c)] * (G.col(c).array() - mg - Y.col(c).array() * mgy);
    }
  });
}

Var normalize_rows(Var a, double eps) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  Tensor out = A;
  std::vector<double> norms(static_cast<std::size_t>(A.rows()));
  auto m = mat(out);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    norms[static_cast<std::size_t>(r)] = n;
    m.row(r) /= std::max(n, eps);
  }
  return g.record(std::move(out), {a}, [a, norms, eps](Graph& g, const Tensor& gy, const Tensor& y) {
    auto ga = mat(g.grad_buffer(a));
    const auto Y = mat(y);
    const auto G = mat(gy);
    for (Eigen::Index r = 0; r < Y.rows(); ++r) {
      const double n = norms[static_cast<std::size_t>(r)];
      if (n > eps) {
        ga.row(r) += (G.row(r) - Y.row(r) * Y.row(r).dot(G.row(r))) / n;
      } else {
        ga.row(r) += G.row(r) / eps;
      }
    }
  });
}

Var reshape(Var a, std::vector<int> shape) {
  Graph& g = graph_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return g.record(std::move(out), {a}, [a](Graph& g, const Tensor& gy, const Tensor&) {
    arr(g.grad_buffer(a)) += arr(gy);
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const int C = A.cols();
  std::vector<int> idx(rows.begin(), rows.end());
  Tensor out({static_cast<int>(idx.size()), C});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= A.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(A.row(idx[i]).data(), C, out.row(static_cast<int>(i)).data());
  }
  return g.record(std::move(out), {a}, [a, idx](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& ga = g.grad_buffer(a);
    const int C = gy.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = ga.row(idx[i]);
      auto src = gy.row(static_cast<int>(i));
      for (int c = 0; c < C; ++c) dst[static_cast<std::size_t>(c)] += src[static_cast<std::size_t>(c)];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Graph& g = graph_of(parts.front());
  const int C = parts.front().cols();
  int R = 0;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    if (p.cols() != C) throw ShapeError("concat_rows: column mismatch");
    R += p.rows();
  }
  Tensor out({R, C});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy(v.values().begin(), v.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.size();
  }
  return g.record(std::move(out), parts, [parts](Graph& g, const Tensor& gy, const Tensor&) {
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.value().size();
      if (needs(g, p)) {
        Tensor& gp = g.grad_buffer(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += gy[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_cols(Var a, int begin, int end) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  if (begin < 0 || end > A.cols() || begin >= end) throw ShapeError("slice_cols: bad range");
  Tensor out({A.rows(), end - begin});
  mat(out) = mat(A).middleCols(begin, end - begin);
  return g.record(std::move(out), {a}, [a, begin](Graph& g, const Tensor& gy, const Tensor&) {
    mat(g.grad_buffer(a)).middleCols(begin, gy.cols()) += mat(gy);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Graph& g = graph_of(parts.front());
  const int R = parts.front().rows();
  int C = 0;
  for (const Var& p : parts) {
    same_graph(parts.front(), p);
    if (p.rows() != R) throw ShapeError("concat_cols: row mismatch");
    C += p.cols();
  }
  Tensor out({R, C});
  int offset = 0;
  for (const Var& p : parts) {
    mat(out).middleCols(offset, p.cols()) = mat(p.value());
    offset += p.cols();
  }
  return g.record(std::move(out), parts, [parts](Graph& g, const Tensor& gy, const Tensor&) {
    int offset = 0;
    for (const Var& p : parts) {
      if (needs(g, p)) mat(g.grad_buffer(p)) += mat(gy).middleCols(offset, p.cols());
      offset += p.cols();
    }
  });
}

Var pick_cols(Var a, std::span<const int> cols) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  if (static_cast<int>(cols.size()) != A.rows()) throw ShapeError("pick_cols: one column per row required");
  std::vector<int> idx(cols.begin(), cols.end());
  Tensor out({A.rows(), 1});
  for (int r = 0; r < A.rows(); ++r) {
    if (idx[static_cast<std::size_t>(r)] < 0 || idx[static_cast<std::size_t>(r)] >= A.cols()) {
      throw ShapeError("pick_cols: column out of range");
    }
    out[static_cast<std::size_t>(r)] = A.at(r, idx[static_cast<std::size_t>(r)]);
  }
  return g.record(std::move(out), {a}, [a, idx](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& ga = g.grad_buffer(a);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.at(static_cast<int>(r), idx[r]) += gy[r];
  });
}

Var conv3x3(Var x, Var weight, Var bias) {
  same_graph(x, weight);
  same_graph(x, bias);
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() != 3) throw ShapeError("conv3x3 expects H x W x C input, got " + shape_string(X.shape()));
  const int H = X.dim(0);
  const int W = X.dim(1);
  const int Cin = X.dim(2);
  const Tensor& Wt = weight.value();
  if (Wt.rows() != 9 * Cin) {
    throw ShapeError("conv3x3: weight " + shape_string(Wt.shape()) + " for " + std::to_string(Cin) +
                     " input channels");
  }
  const int Cout = Wt.cols();
  if (static_cast<int>(bias.value().size()) != Cout) throw ShapeError("conv3x3: bias size");

  // im2col; rows are output pixels, columns (ky, kx, ci)
  auto cols = std::make_shared<Tensor>(std::vector<int>{H * W, 9 * Cin});
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      double* dst = cols->row(y * W + xx).data();
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = xx + kx - 1;
          double* cell = dst + (ky * 3 + kx) * Cin;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
            std::fill_n(cell, Cin, 0.0);
          } else {
            std::copy_n(X.data() + (static_cast<std::size_t>(sy) * W + sx) * Cin, Cin, cell);
          }
        }
      }
    }
  }
  Tensor out({H, W, Cout});
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.value().data(), Cout);
  mat(out).noalias() = mat(*cols) * mat(Wt);
  mat(out).rowwise() += b;
  return g.record(std::move(out), {x, weight, bias},
                  [x, weight, bias, cols, H, W, Cin](Graph& g, const Tensor& gy, const Tensor&) {
                    if (needs(g, weight)) mat(g.grad_buffer(weight)).noalias() += mat(*cols).transpose() * mat(gy);
                    if (needs(g, bias)) {
                      Tensor& gb = g.grad_buffer(bias);
                      Eigen::Map<Eigen::RowVectorXd>(gb.data(), gy.cols()) += mat(gy).colwise().sum();
                    }
                    if (needs(g, x)) {
                      RowMat dcols = mat(gy) * mat(weight.value()).transpose();
                      Tensor& gx = g.grad_buffer(x);
                      for (int y = 0; y < H; ++y) {
                        for (int xx = 0; xx < W; ++xx) {
                          const double* src = dcols.data() + static_cast<std::size_t>(y * W + xx) * 9 * Cin;
                          for (int ky = 0; ky < 3; ++ky) {
                            const int sy = y + ky - 1;
                            if (sy < 0 || sy >= H) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                              const int sx = xx + kx - 1;
                              if (sx < 0 || sx >= W) continue;
                              double* dst = gx.data() + (static_cast<std::size_t>(sy) * W + sx) * Cin;
                              const double* cell = src + (ky * 3 + kx) * Cin;
                              for (int c = 0; c < Cin; ++c) dst[c] += cell[c];
                            }
                          }
                        }
                      }
                    }
                  });
}

Var max_pool2x2(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() != 3 || X.dim(0) % 2 || X.dim(1) % 2) {
    throw ShapeError("max_pool2x2 expects even H x W x C input, got " + shape_string(X.shape()));
  }
  const int H = X.dim(0) / 2;
  const int W = X.dim(1) / 2;
  const int C = X.dim(2);
  Tensor out({H, W, C});
  std::vector<int> arg(out.size());
  for (int y = 0; y < H; ++y) {
    for (int xx = 0; xx < W; ++xx) {
      for (int c = 0; c < C; ++c) {
        int best = ((2 * y) * X.dim(1) + 2 * xx) * C + c;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = ((2 * y + dy) * X.dim(1) + 2 * xx + dx) * C + c;
            if (X[static_cast<std::size_t>(idx)] > X[static_cast<std::size_t>(best)]) best = idx;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(y) * W + xx) * C + c;
        arg[o] = best;
        out[o] = X[static_cast<std::size_t>(best)];
      }
    }
  }
  return g.record(std::move(out), {x}, [x, arg](Graph& g, const Tensor& gy, const Tensor&) {
    Tensor& gx = g.grad_buffer(x);
    for (std::size_t o = 0; o < arg.size(); ++o) gx[static_cast<std::size_t>(arg[o])] += gy[o];
  });
}

Tensor bilinear_resize_matrix(int in_h, int in_w, int out_h, int out_w) {
  auto axis = [](int in, int out) {
    Tensor m({out, in});
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      const int hi = std::min(lo + 1, in - 1);
      const double t = src - lo;
      m.at(o, lo) += 1.0 - t;
      m.at(o, hi) += t;
    }
    return m;
  };
  const Tensor ry = axis(in_h, out_h);
  const Tensor rx = axis(in_w, out_w);
  Tensor r({out_h * out_w, in_h * in_w});
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      for (int iy = 0; iy < in_h; ++iy) {
        const double wy = ry.at(oy, iy);
        if (wy == 0.0) continue;
        for (int ix = 0; ix < in_w; ++ix) {
          const double wx = rx.at(ox, ix);
          if (wx != 0.0) r.at(oy * out_w + ox, iy * in_w + ix) = wy * wx;
        }
      }
    }
  }
  return r;
}

Var resize_bilinear(Var x, int in_h, int in_w, int out_h, int out_w) {
  const Tensor& X = x.value();
  if (X.rows() != in_h * in_w) throw ShapeError("resize_bilinear: input is not " + std::to_string(in_h) + "x" + std::to_string(in_w));
  const int C = X.cols();
  if (in_h == out_h && in_w == out_w) return reshape(x, {out_h, out_w, C});
  Graph& g = graph_of(x);
  Var r = g.constant(bilinear_resize_matrix(in_h, in_w, out_h, out_w));
  return reshape(matmul(r, x), {out_h, out_w, C});
}

Var cross_entropy_rows(Var logits, std::span<const int> labels) {
  Graph& g = graph_of(logits);
  const Tensor& L = logits.value();
  const int R = L.rows();
  const int C = L.cols();
  if (static_cast<int>(labels.size()) != R || R == 0) throw ShapeError("cross_entropy_rows: label count");
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor probs({R, C});
  double total = 0.0;
  for (int r = 0; r < R; ++r) {
    if (lab[static_cast<std::size_t>(r)] < 0 || lab[static_cast<std::size_t>(r)] >= C) {
      throw ShapeError("cross_entropy_rows: label out of range");
    }
    double mx = L.at(r, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, L.at(r, c));
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(L.at(r, c) - mx);
    for (int c = 0; c < C; ++c) probs.at(r, c) = std::exp(L.at(r, c) - mx) / z;
    total += (mx + std::log(z)) - L.at(r, lab[static_cast<std::size_t>(r)]);
  }
  return g.record(Tensor({}, total / R), {logits},
                  [logits, lab, probs](Graph& g, const Tensor& gy, const Tensor&) {
                    Tensor& gl = g.grad_buffer(logits);
                    const int R = probs.rows();
                    const double s = gy[0] / R;
                    for (int r = 0; r < R; ++r) {
                      for (int c = 0; c < probs.cols(); ++c) gl.at(r, c) += s * probs.at(r, c);
                      gl.at(r, lab[static_cast<std::size_t>(r)]) -= s;
                    }
                  });
}

}  // namespace coar::ag
