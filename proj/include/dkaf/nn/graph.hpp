#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dkaf/core/rng.hpp"

namespace dkaf::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

// Trainable tensor with Adam state.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;
  Mat v;

  Param(std::string n, Mat init);
  void zero_grad() { grad.setZero(); }
};

class ParamStore {
 public:
  Param& add(const std::string& name, Mat init);
  Param& uniform(const std::string& name, int rows, int cols, double scale, Rng& rng);
  // Glorot-uniform for a dense map rows x cols.
  Param& dense(const std::string& name, int rows, int cols, Rng& rng);
  Param& zeros(const std::string& name, int rows, int cols);

  Param& get(const std::string& name);
  const Param* find(const std::string& name) const;
  // Copies values of parameters named `from_prefix`* in `src` into `to_prefix`* here.
  // Returns the number copied; throws InvalidInput on a shape mismatch.
  std::size_t copy_from(const ParamStore& src, const std::string& from_prefix, const std::string& to_prefix);
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  std::size_t count() const;
  void zero_grad();

  void save(const std::string& path) const;
  void load(const std::string& path);
  std::string serialize() const;
  void deserialize(const std::string& blob);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> by_name_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
};

class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {}
  // Applies one update from the accumulated gradients and clears them. Returns the
  // pre-clipping global gradient norm.
  double step();
  std::int64_t steps() const { return t_; }

 private:
  ParamStore& store_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Column segments: segment s covers columns [start[s], start[s+1]).
struct Segments {
  std::vector<int> start;  // size = count + 1
  int count() const { return static_cast<int>(start.size()) - 1; }
  int size(int s) const { return start[s + 1] - start[s]; }
  int total() const { return start.back(); }
  static Segments from_sizes(const std::vector<int>& sizes);
  // Segment index of every column.
  std::vector<int> owner() const;
};

struct GruParams {
  Param* w_ih;  // 3H x in
  Param* w_hh;  // 3H x H
  Param* b_ih;  // 3H x 1
  Param* b_hh;  // 3H x 1
};

// Reverse-mode tape. Values are column-major: vectors are d x 1 and sets of
// vectors are d x N.
class Graph {
 public:
  Graph() { nodes_.reserve(256); }

  Var param(Param& p);
  Var constant(Mat m);

  const Mat& value(Var v) const;
  double scalar(Var v) const { return value(v)(0, 0); }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  // a (d x N) + b (d x 1) broadcast over columns.
  Var add_bias(Var a, Var b);
  // a (d x N) + columns of b (d x S) broadcast within each segment.
  Var add_seg_broadcast(Var a, Var b, const Segments& seg);

  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var log_sigmoid(Var a);

  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, int start, int n);
  Var slice_cols(Var a, int start, int n);
  // Columns of a at the given indices (repeats allowed); embedding lookup.
  Var gather_cols(Var a, std::vector<int> idx);
  // a (d x M) times a constant sparse M x N matrix.
  Var sparse_matmul(Var a, std::shared_ptr<const SpMat> s);

  // Row vector ops over column segments (input 1 x N).
  Var segment_softmax(Var a, const Segments& seg);
  Var segment_log_softmax(Var a, const Segments& seg);
  Var segment_logsumexp(Var a, const Segments& seg);  // -> 1 x S
  // Sum_j w_j x_j within each segment: x (d x N), w (1 x N) -> d x S.
  Var segment_wsum(Var x, Var w, const Segments& seg);
  Var segment_sum(Var x, const Segments& seg);
  Var segment_mean(Var x, const Segments& seg);

  // Column-wise log-softmax of a (V x N).
  Var col_log_softmax(Var a);
  Var sum_rows(Var a);  // 1 x N column sums
  Var sum(Var a);       // 1 x 1
  Var mean(Var a);      // 1 x 1
  Var pick(Var a, int r, int c);
  // Entries a(rows[k], cols[k]) as a 1 x K row.
  Var pick_many(Var a, std::vector<int> rows, std::vector<int> cols);
  // Mean binary cross-entropy with logits against constant targets of the same shape.
  Var bce_with_logits(Var logits, Mat targets);

  // GRU over packed sequences. x is in x N; sequence b occupies columns
  // [seg.start[b], seg.start[b+1]). Output H x N hidden states (time-aligned with
  // x; for reverse=true each sequence is read right to left).
  Var gru(Var x, const Segments& seg, const GruParams& p, bool reverse);

  void backward(Var loss);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    const Mat* ext = nullptr;  // parameter value, not copied
    Mat grad;
    Param* param = nullptr;
    std::function<void(Graph&)> back;
  };
  Var push(Mat val, std::function<void(Graph&)> back = {});
  Mat& g(int id);  // gradient accumulator, allocated on first use
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }
  const Mat& val(int id) const { return nodes_[id].ext ? *nodes_[id].ext : nodes_[id].val; }

  std::vector<Node> nodes_;
  std::unordered_map<Param*, int> param_ids_;
};

}  // namespace dkaf::nn
