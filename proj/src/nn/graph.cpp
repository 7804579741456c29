#include "dkaf/nn/graph.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dkaf/core/error.hpp"

namespace dkaf::nn {

Param::Param(std::string n, Mat init) : name(std::move(n)), value(std::move(init)) {
  grad = Mat::Zero(value.rows(), value.cols());
  m = Mat::Zero(value.rows(), value.cols());
  v = Mat::Zero(value.rows(), value.cols());
}

Param& ParamStore::add(const std::string& name, Mat init) {
  if (by_name_.count(name)) throw InvalidInput("duplicate parameter " + name);
  params_.push_back(std::make_unique<Param>(name, std::move(init)));
  by_name_[name] = params_.back().get();
  return *params_.back();
}

Param& ParamStore::uniform(const std::string& name, int rows, int cols, double scale, Rng& rng) {
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-scale, scale);
  return add(name, std::move(m));
}

Param& ParamStore::dense(const std::string& name, int rows, int cols, Rng& rng) {
  return uniform(name, rows, cols, std::sqrt(6.0 / (rows + cols)), rng);
}

Param& ParamStore::zeros(const std::string& name, int rows, int cols) {
  return add(name, Mat::Zero(rows, cols));
}

Param& ParamStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw InvalidInput("unknown parameter " + name);
  return *it->second;
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::size_t ParamStore::copy_from(const ParamStore& src, const std::string& from_prefix,
                                  const std::string& to_prefix) {
  std::size_t n = 0;
  for (const auto& p : src.all()) {
    if (p->name.rfind(from_prefix, 0) != 0) continue;
    Param& dst = get(to_prefix + p->name.substr(from_prefix.size()));
    if (dst.value.rows() != p->value.rows() || dst.value.cols() != p->value.cols())
      throw InvalidInput("copy_from: shape mismatch for " + dst.name);
    dst.value = p->value;
    ++n;
  }
  return n;
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::string ParamStore::serialize() const {
  std::ostringstream out(std::ios::binary);
  auto put64 = [&](std::uint64_t x) { out.write(reinterpret_cast<const char*>(&x), 8); };
  out.write("DKAFPRM1", 8);
  put64(params_.size());
  for (const auto& p : params_) {
    put64(p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put64(static_cast<std::uint64_t>(p->value.rows()));
    put64(static_cast<std::uint64_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
  return out.str();
}

void ParamStore::deserialize(const std::string& blob) {
  std::istringstream in(blob, std::ios::binary);
  auto get64 = [&]() {
    std::uint64_t x = 0;
    if (!in.read(reinterpret_cast<char*>(&x), 8)) throw InvalidInput("truncated parameter blob");
    return x;
  };
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "DKAFPRM1", 8) != 0)
    throw InvalidInput("not a parameter blob");
  auto n = get64();
  if (n != params_.size()) throw InvalidInput("parameter count mismatch");
  for (std::uint64_t k = 0; k < n; ++k) {
    std::string name(get64(), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    auto& p = get(name);
    auto r = static_cast<Eigen::Index>(get64());
    auto c = static_cast<Eigen::Index>(get64());
    if (r != p.value.rows() || c != p.value.cols()) throw InvalidInput("shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double) * p.value.size()));
    if (!in) throw InvalidInput("truncated parameter blob");
  }
}

void ParamStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  auto s = serialize();
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void ParamStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  deserialize(ss.str());
}

double Adam::step() {
  double sq = 0.0;
  for (const auto& p : store_.all()) sq += p->grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw Divergence("non-finite gradient norm");
  double k = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  double step = cfg_.lr * std::sqrt(bc2) / bc1;
  for (const auto& p : store_.all()) {
    p->grad *= k;
    p->m = cfg_.beta1 * p->m + (1.0 - cfg_.beta1) * p->grad;
    p->v = cfg_.beta2 * p->v + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= step * p->m.array() / (p->v.array().sqrt() + cfg_.eps);
    p->zero_grad();
  }
  return norm;
}

Segments Segments::from_sizes(const std::vector<int>& sizes) {
  Segments s;
  s.start.resize(sizes.size() + 1);
  s.start[0] = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) s.start[i + 1] = s.start[i] + sizes[i];
  return s;
}

std::vector<int> Segments::owner() const {
  std::vector<int> o(total());
  for (int s = 0; s < count(); ++s)
    for (int j = start[s]; j < start[s + 1]; ++j) o[j] = s;
  return o;
}

// ---------------------------------------------------------------------------

Var Graph::push(Mat v, std::function<void(Graph&)> back) {
  Node n;
  n.val = std::move(v);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Graph::g(int id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Mat& v = val(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

const Mat& Graph::value(Var v) const { return val(v.id); }

Var Graph::param(Param& p) {
  auto it = param_ids_.find(&p);
  if (it != param_ids_.end()) return Var{it->second};
  Node n;
  n.ext = &p.value;
  n.param = &p;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_ids_[&p] = id;
  return Var{id};
}

Var Graph::constant(Mat m) { return push(std::move(m)); }

Var Graph::matmul(Var a, Var b) {
  Mat out;
  out.noalias() = val(a.id) * val(b.id);
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, b, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    G.g(a.id).noalias() += go * G.val(b.id).transpose();
    G.g(b.id).noalias() += G.val(a.id).transpose() * go;
  };
  return o;
}

Var Graph::add(Var a, Var b) {
  Var o = push(val(a.id) + val(b.id));
  nodes_[o.id].back = [a, b, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    G.g(a.id) += go;
    G.g(b.id) += go;
  };
  return o;
}

Var Graph::sub(Var a, Var b) {
  Var o = push(val(a.id) - val(b.id));
  nodes_[o.id].back = [a, b, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    G.g(a.id) += go;
    G.g(b.id) -= go;
  };
  return o;
}

Var Graph::cmul(Var a, Var b) {
  Var o = push(val(a.id).cwiseProduct(val(b.id)));
  nodes_[o.id].back = [a, b, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    G.g(a.id) += go.cwiseProduct(G.val(b.id));
    G.g(b.id) += go.cwiseProduct(G.val(a.id));
  };
  return o;
}

Var Graph::scale(Var a, double s) {
  Var o = push(val(a.id) * s);
  nodes_[o.id].back = [a, o, s](Graph& G) { G.g(a.id) += G.nodes_[o.id].grad * s; };
  return o;
}

Var Graph::add_scalar(Var a, double s) {
  Var o = push((val(a.id).array() + s).matrix());
  nodes_[o.id].back = [a, o](Graph& G) { G.g(a.id) += G.nodes_[o.id].grad; };
  return o;
}

Var Graph::add_bias(Var a, Var b) {
  const Mat& A = val(a.id);
  if (val(b.id).rows() != A.rows() || val(b.id).cols() != 1) throw Error("add_bias: shape mismatch");
  Var o = push(A.colwise() + val(b.id).col(0));
  nodes_[o.id].back = [a, b, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    G.g(a.id) += go;
    G.g(b.id) += go.rowwise().sum();
  };
  return o;
}

Var Graph::add_seg_broadcast(Var a, Var b, const Segments& seg) {
  Mat out = val(a.id);
  const Mat& B = val(b.id);
  for (int s = 0; s < seg.count(); ++s)
    out.middleCols(seg.start[s], seg.size(s)).colwise() += B.col(s);
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, b, o, seg](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    G.g(a.id) += go;
    Mat& gb = G.g(b.id);
    for (int s = 0; s < seg.count(); ++s)
      gb.col(s) += go.middleCols(seg.start[s], seg.size(s)).rowwise().sum();
  };
  return o;
}

Var Graph::tanh(Var a) {
  Var o = push(val(a.id).array().tanh().matrix());
  nodes_[o.id].back = [a, o](Graph& G) {
    const Mat& y = G.nodes_[o.id].val;
    G.g(a.id).array() += G.nodes_[o.id].grad.array() * (1.0 - y.array().square());
  };
  return o;
}

Var Graph::sigmoid(Var a) {
  Var o = push((1.0 / (1.0 + (-val(a.id).array()).exp())).matrix());
  nodes_[o.id].back = [a, o](Graph& G) {
    const Mat& y = G.nodes_[o.id].val;
    G.g(a.id).array() += G.nodes_[o.id].grad.array() * y.array() * (1.0 - y.array());
  };
  return o;
}

Var Graph::relu(Var a) {
  Var o = push(val(a.id).cwiseMax(0.0));
  nodes_[o.id].back = [a, o](Graph& G) {
    const Mat& x = G.val(a.id);
    G.g(a.id).array() += (x.array() > 0.0).select(G.nodes_[o.id].grad.array(), 0.0);
  };
  return o;
}

Var Graph::log(Var a) {
  Var o = push(val(a.id).array().log().matrix());
  nodes_[o.id].back = [a, o](Graph& G) {
    G.g(a.id).array() += G.nodes_[o.id].grad.array() / G.val(a.id).array();
  };
  return o;
}

Var Graph::exp(Var a) {
  Var o = push(val(a.id).array().exp().matrix());
  nodes_[o.id].back = [a, o](Graph& G) {
    G.g(a.id).array() += G.nodes_[o.id].grad.array() * G.nodes_[o.id].val.array();
  };
  return o;
}

Var Graph::log_sigmoid(Var a) {
  // log sigma(x) = -softplus(-x), computed stably.
  const Mat& x = val(a.id);
  Mat y = x.unaryExpr([](double v) { return v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v)); });
  Var o = push(std::move(y));
  nodes_[o.id].back = [a, o](Graph& G) {
    const Mat& xx = G.val(a.id);
    Mat s = xx.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(v)); });  // 1 - sigma(x)
    G.g(a.id).array() += G.nodes_[o.id].grad.array() * s.array();
  };
  return o;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  Eigen::Index cols = val(parts.at(0).id).cols();
  for (auto p : parts) {
    if (val(p.id).cols() != cols) throw Error("concat_rows: column mismatch");
    rows += val(p.id).rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (auto p : parts) {
    out.middleRows(r, val(p.id).rows()) = val(p.id);
    r += val(p.id).rows();
  }
  Var o = push(std::move(out));
  nodes_[o.id].back = [parts, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    Eigen::Index r = 0;
    for (auto p : parts) {
      auto n = G.val(p.id).rows();
      G.g(p.id) += go.middleRows(r, n);
      r += n;
    }
  };
  return o;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index cols = 0;
  Eigen::Index rows = val(parts.at(0).id).rows();
  for (auto p : parts) {
    if (val(p.id).rows() != rows) throw Error("concat_cols: row mismatch");
    cols += val(p.id).cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (auto p : parts) {
    out.middleCols(c, val(p.id).cols()) = val(p.id);
    c += val(p.id).cols();
  }
  Var o = push(std::move(out));
  nodes_[o.id].back = [parts, o](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    Eigen::Index c = 0;
    for (auto p : parts) {
      auto n = G.val(p.id).cols();
      G.g(p.id) += go.middleCols(c, n);
      c += n;
    }
  };
  return o;
}

Var Graph::slice_rows(Var a, int start, int n) {
  Var o = push(val(a.id).middleRows(start, n));
  nodes_[o.id].back = [a, o, start, n](Graph& G) {
    G.g(a.id).middleRows(start, n) += G.nodes_[o.id].grad;
  };
  return o;
}

Var Graph::slice_cols(Var a, int start, int n) {
  Var o = push(val(a.id).middleCols(start, n));
  nodes_[o.id].back = [a, o, start, n](Graph& G) {
    G.g(a.id).middleCols(start, n) += G.nodes_[o.id].grad;
  };
  return o;
}

Var Graph::gather_cols(Var a, std::vector<int> idx) {
  const Mat& A = val(a.id);
  Mat out(A.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= A.cols()) throw Error("gather_cols: index out of range");
    out.col(static_cast<Eigen::Index>(j)) = A.col(idx[j]);
  }
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, o, idx = std::move(idx)](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    Mat& ga = G.g(a.id);
    for (std::size_t j = 0; j < idx.size(); ++j) ga.col(idx[j]) += go.col(static_cast<Eigen::Index>(j));
  };
  return o;
}

Var Graph::sparse_matmul(Var a, std::shared_ptr<const SpMat> s) {
  Mat out = val(a.id) * (*s);
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, o, s](Graph& G) {
    G.g(a.id) += G.nodes_[o.id].grad * s->transpose();
  };
  return o;
}

Var Graph::segment_softmax(Var a, const Segments& seg) {
  const Mat& x = val(a.id);
  Mat y(1, x.cols());
  for (int s = 0; s < seg.count(); ++s) {
    int b = seg.start[s], n = seg.size(s);
    if (n == 0) continue;
    double m = x.block(0, b, 1, n).maxCoeff();
    y.block(0, b, 1, n) = (x.block(0, b, 1, n).array() - m).exp().matrix();
    y.block(0, b, 1, n) /= y.block(0, b, 1, n).sum();
  }
  Var o = push(std::move(y));
  nodes_[o.id].back = [a, o, seg](Graph& G) {
    const Mat& yy = G.nodes_[o.id].val;
    const Mat& go = G.nodes_[o.id].grad;
    Mat& ga = G.g(a.id);
    for (int s = 0; s < seg.count(); ++s) {
      int b = seg.start[s], n = seg.size(s);
      if (n == 0) continue;
      double dot = (go.block(0, b, 1, n).array() * yy.block(0, b, 1, n).array()).sum();
      ga.block(0, b, 1, n).array() += yy.block(0, b, 1, n).array() * (go.block(0, b, 1, n).array() - dot);
    }
  };
  return o;
}

Var Graph::segment_log_softmax(Var a, const Segments& seg) {
  const Mat& x = val(a.id);
  Mat y(1, x.cols());
  for (int s = 0; s < seg.count(); ++s) {
    int b = seg.start[s], n = seg.size(s);
    if (n == 0) continue;
    double m = x.block(0, b, 1, n).maxCoeff();
    double lse = m + std::log((x.block(0, b, 1, n).array() - m).exp().sum());
    y.block(0, b, 1, n) = (x.block(0, b, 1, n).array() - lse).matrix();
  }
  Var o = push(std::move(y));
  nodes_[o.id].back = [a, o, seg](Graph& G) {
    const Mat& yy = G.nodes_[o.id].val;
    const Mat& go = G.nodes_[o.id].grad;
    Mat& ga = G.g(a.id);
    for (int s = 0; s < seg.count(); ++s) {
      int b = seg.start[s], n = seg.size(s);
      if (n == 0) continue;
      double tot = go.block(0, b, 1, n).sum();
      ga.block(0, b, 1, n).array() += go.block(0, b, 1, n).array() - yy.block(0, b, 1, n).array().exp() * tot;
    }
  };
  return o;
}

Var Graph::segment_logsumexp(Var a, const Segments& seg) {
  const Mat& x = val(a.id);
  Mat y(1, seg.count());
  for (int s = 0; s < seg.count(); ++s) {
    int b = seg.start[s], n = seg.size(s);
    if (n == 0) {
      y(0, s) = -std::numeric_limits<double>::infinity();
      continue;
    }
    double m = x.block(0, b, 1, n).maxCoeff();
    y(0, s) = m + std::log((x.block(0, b, 1, n).array() - m).exp().sum());
  }
  Var o = push(std::move(y));
  nodes_[o.id].back = [a, o, seg](Graph& G) {
    const Mat& yy = G.nodes_[o.id].val;
    const Mat& go = G.nodes_[o.id].grad;
    const Mat& xx = G.val(a.id);
    Mat& ga = G.g(a.id);
    for (int s = 0; s < seg.count(); ++s) {
      int b = seg.start[s], n = seg.size(s);
      if (n == 0) continue;
      ga.block(0, b, 1, n).array() += go(0, s) * (xx.block(0, b, 1, n).array() - yy(0, s)).exp();
    }
  };
  return o;
}

Var Graph::segment_wsum(Var x, Var w, const Segments& seg) {
  const Mat& X = val(x.id);
  const Mat& W = val(w.id);
  Mat out = Mat::Zero(X.rows(), seg.count());
  for (int s = 0; s < seg.count(); ++s) {
    int b = seg.start[s], n = seg.size(s);
    if (n == 0) continue;
    out.col(s).noalias() = X.middleCols(b, n) * W.block(0, b, 1, n).transpose();
  }
  Var o = push(std::move(out));
  nodes_[o.id].back = [x, w, o, seg](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    const Mat& X = G.val(x.id);
    const Mat& W = G.val(w.id);
    Mat& gx = G.g(x.id);
    Mat& gw = G.g(w.id);
    for (int s = 0; s < seg.count(); ++s) {
      int b = seg.start[s], n = seg.size(s);
      if (n == 0) continue;
      gx.middleCols(b, n).noalias() += go.col(s) * W.block(0, b, 1, n);
      gw.block(0, b, 1, n).noalias() += go.col(s).transpose() * X.middleCols(b, n);
    }
  };
  return o;
}

Var Graph::segment_sum(Var x, const Segments& seg) {
  const Mat& X = val(x.id);
  Mat out = Mat::Zero(X.rows(), seg.count());
  for (int s = 0; s < seg.count(); ++s)
    if (seg.size(s) > 0) out.col(s) = X.middleCols(seg.start[s], seg.size(s)).rowwise().sum();
  Var o = push(std::move(out));
  nodes_[o.id].back = [x, o, seg](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    Mat& gx = G.g(x.id);
    for (int s = 0; s < seg.count(); ++s)
      if (seg.size(s) > 0) gx.middleCols(seg.start[s], seg.size(s)).colwise() += go.col(s);
  };
  return o;
}

Var Graph::segment_mean(Var x, const Segments& seg) {
  const Mat& X = val(x.id);
  Mat out = Mat::Zero(X.rows(), seg.count());
  for (int s = 0; s < seg.count(); ++s)
    if (seg.size(s) > 0) out.col(s) = X.middleCols(seg.start[s], seg.size(s)).rowwise().mean();
  Var o = push(std::move(out));
  nodes_[o.id].back = [x, o, seg](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    Mat& gx = G.g(x.id);
    for (int s = 0; s < seg.count(); ++s)
      if (seg.size(s) > 0)
        gx.middleCols(seg.start[s], seg.size(s)).colwise() += go.col(s) / static_cast<double>(seg.size(s));
  };
  return o;
}

Var Graph::col_log_softmax(Var a) {
  const Mat& x = val(a.id);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double m = x.col(j).maxCoeff();
    double lse = m + std::log((x.col(j).array() - m).exp().sum());
    y.col(j) = (x.col(j).array() - lse).matrix();
  }
  Var o = push(std::move(y));
  nodes_[o.id].back = [a, o](Graph& G) {
    const Mat& yy = G.nodes_[o.id].val;
    const Mat& go = G.nodes_[o.id].grad;
    Mat& ga = G.g(a.id);
    for (Eigen::Index j = 0; j < yy.cols(); ++j)
      ga.col(j).array() += go.col(j).array() - yy.col(j).array().exp() * go.col(j).sum();
  };
  return o;
}

Var Graph::sum_rows(Var a) {
  Var o = push(val(a.id).colwise().sum());
  nodes_[o.id].back = [a, o](Graph& G) {
    G.g(a.id).rowwise() += G.nodes_[o.id].grad.row(0);
  };
  return o;
}

Var Graph::sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a.id).sum();
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, o](Graph& G) { G.g(a.id).array() += G.nodes_[o.id].grad(0, 0); };
  return o;
}

Var Graph::mean(Var a) {
  double n = static_cast<double>(val(a.id).size());
  return scale(sum(a), 1.0 / n);
}

Var Graph::pick(Var a, int r, int c) {
  Mat out(1, 1);
  out(0, 0) = val(a.id)(r, c);
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, o, r, c](Graph& G) { G.g(a.id)(r, c) += G.nodes_[o.id].grad(0, 0); };
  return o;
}

Var Graph::pick_many(Var a, std::vector<int> rows, std::vector<int> cols) {
  const Mat& A = val(a.id);
  Mat out(1, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(0, static_cast<Eigen::Index>(k)) = A(rows[k], cols[k]);
  Var o = push(std::move(out));
  nodes_[o.id].back = [a, o, rows = std::move(rows), cols = std::move(cols)](Graph& G) {
    const Mat& go = G.nodes_[o.id].grad;
    Mat& ga = G.g(a.id);
    for (std::size_t k = 0; k < rows.size(); ++k) ga(rows[k], cols[k]) += go(0, static_cast<Eigen::Index>(k));
  };
  return o;
}

Var Graph::bce_with_logits(Var logits, Mat targets) {
  const Mat& x = val(logits.id);
  if (x.rows() != targets.rows() || x.cols() != targets.cols()) throw Error("bce: shape mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double v = x.data()[i], t = targets.data()[i];
    total += std::max(v, 0.0) - v * t + std::log1p(std::exp(-std::abs(v)));
  }
  Mat out(1, 1);
  out(0, 0) = total / static_cast<double>(x.size());
  Var o = push(std::move(out));
  nodes_[o.id].back = [logits, o, t = std::move(targets)](Graph& G) {
    const Mat& xx = G.val(logits.id);
    double go = G.nodes_[o.id].grad(0, 0) / static_cast<double>(xx.size());
    Mat s = (1.0 / (1.0 + (-xx.array()).exp())).matrix();
    G.g(logits.id) += go * (s - t);
  };
  return o;
}

namespace {

// Column of x/output for sequence b at step t.
int gru_col(const Segments& seg, int b, int t, bool reverse) {
  return reverse ? seg.start[b + 1] - 1 - t : seg.start[b] + t;
}

}  // namespace

Var Graph::gru(Var x, const Segments& seg, const GruParams& p, bool reverse) {
  const Mat& X = val(x.id);
  const Mat& Wih = p.w_ih->value;
  const Mat& Whh = p.w_hh->value;
  const int H = static_cast<int>(Whh.cols());
  const int N = static_cast<int>(X.cols());
  const int B = seg.count();
  if (seg.total() != N) throw Error("gru: segments do not cover input");

  Mat Gi = Wih * X;
  Gi.colwise() += p.b_ih->value.col(0);

  int T = 0;
  for (int b = 0; b < B; ++b) T = std::max(T, seg.size(b));
  auto col = [&seg, reverse](int b, int t) { return gru_col(seg, b, t, reverse); };

  Mat out = Mat::Zero(H, N);
  // Saved activations per output column.
  auto saved = std::make_shared<std::array<Mat, 4>>();  // r, z, n, gh_n
  for (auto& m : *saved) m.resize(H, N);

  std::vector<int> active;
  Mat hprev, gh, gi;
  for (int t = 0; t < T; ++t) {
    active.clear();
    for (int b = 0; b < B; ++b)
      if (seg.size(b) > t) active.push_back(b);
    const int A = static_cast<int>(active.size());
    hprev.resize(H, A);
    gi.resize(3 * H, A);
    for (int k = 0; k < A; ++k) {
      int b = active[k];
      hprev.col(k) = t == 0 ? Vec::Zero(H) : Vec(out.col(col(b, t - 1)));
      gi.col(k) = Gi.col(col(b, t));
    }
    gh.noalias() = Whh * hprev;
    gh.colwise() += p.b_hh->value.col(0);
    for (int k = 0; k < A; ++k) {
      int c = col(active[k], t);
      auto r = (1.0 / (1.0 + (-(gi.col(k).head(H) + gh.col(k).head(H)).array()).exp())).eval();
      auto z = (1.0 / (1.0 + (-(gi.col(k).segment(H, H) + gh.col(k).segment(H, H)).array()).exp())).eval();
      auto n = (gi.col(k).tail(H).array() + r * gh.col(k).tail(H).array()).tanh().eval();
      out.col(c) = ((1.0 - z) * n + z * hprev.col(k).array()).matrix();
      (*saved)[0].col(c) = r.matrix();
      (*saved)[1].col(c) = z.matrix();
      (*saved)[2].col(c) = n.matrix();
      (*saved)[3].col(c) = gh.col(k).tail(H);
    }
  }

  Var vwih = param(*p.w_ih), vwhh = param(*p.w_hh), vbih = param(*p.b_ih), vbhh = param(*p.b_hh);
  Var o = push(std::move(out));
  nodes_[o.id].back = [=](Graph& G) {
    const Mat& Xv = G.val(x.id);
    const Mat& Hout = G.nodes_[o.id].val;
    const Mat& go = G.nodes_[o.id].grad;
    const Mat& Whh_ = G.val(vwhh.id);
    const Mat& Wih_ = G.val(vwih.id);
    const auto& S = *saved;
    auto col = [&seg, reverse](int b, int t) { return gru_col(seg, b, t, reverse); };
    Mat dGi = Mat::Zero(3 * H, N);
    Mat dWhh = Mat::Zero(3 * H, H);
    Vec dbhh = Vec::Zero(3 * H);
    Mat dh = Mat::Zero(H, B);  // gradient flowing into h_t from step t+1
    Mat dgh, hp;
    std::vector<int> act;
    for (int t = T - 1; t >= 0; --t) {
      act.clear();
      for (int b = 0; b < B; ++b)
        if (seg.size(b) > t) act.push_back(b);
      const int A = static_cast<int>(act.size());
      dgh.resize(3 * H, A);
      hp.resize(H, A);
      for (int k = 0; k < A; ++k) {
        int b = act[k];
        int c = col(b, t);
        hp.col(k) = t == 0 ? Vec::Zero(H) : Vec(Hout.col(col(b, t - 1)));
        Vec dht = go.col(c) + dh.col(b);
        auto r = S[0].col(c).array();
        auto z = S[1].col(c).array();
        auto n = S[2].col(c).array();
        auto ghn = S[3].col(c).array();
        auto dn = (dht.array() * (1.0 - z)).eval();
        auto dz = (dht.array() * (hp.col(k).array() - n)).eval();
        auto dan = (dn * (1.0 - n * n)).eval();
        auto dr = (dan * ghn).eval();
        auto dar = (dr * r * (1.0 - r)).eval();
        auto daz = (dz * z * (1.0 - z)).eval();
        dGi.col(c).head(H) = dar.matrix();
        dGi.col(c).segment(H, H) = daz.matrix();
        dGi.col(c).tail(H) = dan.matrix();
        dgh.col(k).head(H) = dar.matrix();
        dgh.col(k).segment(H, H) = daz.matrix();
        dgh.col(k).tail(H) = (dan * r).matrix();
        dh.col(b) = (dht.array() * z).matrix();
      }
      dWhh.noalias() += dgh * hp.transpose();
      dbhh += dgh.rowwise().sum();
      Mat dhp = Whh_.transpose() * dgh;
      for (int k = 0; k < A; ++k) dh.col(act[k]) += dhp.col(k);
    }
    G.g(vwhh.id) += dWhh;
    G.g(vbhh.id) += dbhh;
    G.g(vwih.id).noalias() += dGi * Xv.transpose();
    G.g(vbih.id) += dGi.rowwise().sum();
    G.g(x.id).noalias() += Wih_.transpose() * dGi;
  };
  return o;
}

void Graph::backward(Var loss) {
  const Mat& l = val(loss.id);
  if (l.size() != 1) throw Error("backward: loss must be scalar");
  if (!std::isfinite(l(0, 0))) throw Divergence("non-finite loss");
  g(loss.id).setOnes();
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back(*this);
    if (n.param) n.param->grad += n.grad;
  }
}

}  // namespace dkaf::nn
