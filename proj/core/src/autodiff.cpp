#include "taxonet/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace taxonet::ad {

const Mat& Var::value() const { return tape->val(id); }
const Mat& Var::grad() const { return tape->grad_of(id); }

Var Tape::leaf(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), grad_enabled_, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), false, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

int Tape::push(Mat value, std::initializer_list<int> parents, BackFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (int p : parents) needs = needs || nodes_[static_cast<std::size_t>(p)].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : BackFn()});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::push(Mat value, const std::vector<int>& parents, BackFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (int p : parents) needs = needs || nodes_[static_cast<std::size_t>(p)].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs, needs ? std::move(fn) : BackFn()});
  return static_cast<int>(nodes_.size()) - 1;
}

const Mat& Tape::grad_of(int id) const {
  Node& n = const_cast<Node&>(nodes_[static_cast<std::size_t>(id)]);
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accum(int id, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(const Var& root) {
  assert(root.tape == this);
  assert(val(root.id).size() == 1);
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id)].grad = Mat::Ones(1, 1);
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.needs_grad && n.back && n.grad.size() != 0) n.back(*this, id);
  }
}

namespace {
Tape& tp(Var a) { return *a.tape; }
}  // namespace

Var add(Var a, Var b) {
  int id = tp(a).push(a.value() + b.value(), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    t.accum(pa, g);
    t.accum(pb, g);
  });
  return Var{a.tape, id};
}

Var sub(Var a, Var b) {
  int id = tp(a).push(a.value() - b.value(), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    t.accum(pa, g);
    t.accum(pb, -g);
  });
  return Var{a.tape, id};
}

Var mul(Var a, Var b) {
  int id = tp(a).push(a.value().cwiseProduct(b.value()), {a.id, b.id},
                      [pa = a.id, pb = b.id](Tape& t, int self) {
                        const Mat& g = t.grad_of(self);
                        t.accum(pa, g.cwiseProduct(t.val(pb)));
                        t.accum(pb, g.cwiseProduct(t.val(pa)));
                      });
  return Var{a.tape, id};
}

Var div(Var a, Var b) {
  int id = tp(a).push(a.value().cwiseQuotient(b.value()), {a.id, b.id},
                      [pa = a.id, pb = b.id](Tape& t, int self) {
                        const Mat& g = t.grad_of(self);
                        const Mat& bv = t.val(pb);
                        t.accum(pa, g.cwiseQuotient(bv));
                        t.accum(pb, -(g.cwiseProduct(t.val(self)).cwiseQuotient(bv)));
                      });
  return Var{a.tape, id};
}

Var adds(Var a, double s) {
  int id = tp(a).push(a.value().array() + s, {a.id}, [pa = a.id](Tape& t, int self) {
    t.accum(pa, t.grad_of(self));
  });
  return Var{a.tape, id};
}

Var muls(Var a, double s) {
  int id = tp(a).push(a.value() * s, {a.id}, [pa = a.id, s](Tape& t, int self) {
    t.accum(pa, t.grad_of(self) * s);
  });
  return Var{a.tape, id};
}

Var neg(Var a) { return muls(a, -1.0); }

Var exp(Var a) {
  int id = tp(a).push(a.value().array().exp(), {a.id}, [pa = a.id](Tape& t, int self) {
    t.accum(pa, t.grad_of(self).cwiseProduct(t.val(self)));
  });
  return Var{a.tape, id};
}

Var log(Var a) {
  int id = tp(a).push(a.value().array().log(), {a.id}, [pa = a.id](Tape& t, int self) {
    t.accum(pa, t.grad_of(self).cwiseQuotient(t.val(pa)));
  });
  return Var{a.tape, id};
}

Var sqrt(Var a) {
  int id = tp(a).push(a.value().array().sqrt(), {a.id}, [pa = a.id](Tape& t, int self) {
    t.accum(pa, (t.grad_of(self).array() * 0.5 / t.val(self).array()).matrix());
  });
  return Var{a.tape, id};
}

Var square(Var a) {
  int id = tp(a).push(a.value().array().square(), {a.id}, [pa = a.id](Tape& t, int self) {
    t.accum(pa, (t.grad_of(self).array() * 2.0 * t.val(pa).array()).matrix());
  });
  return Var{a.tape, id};
}

Var relu(Var a) {
  int id = tp(a).push(a.value().cwiseMax(0.0), {a.id}, [pa = a.id](Tape& t, int self) {
    Mat mask = (t.val(pa).array() > 0.0).cast<double>();
    t.accum(pa, t.grad_of(self).cwiseProduct(mask));
  });
  return Var{a.tape, id};
}

Var sigmoid(Var a) {
  Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id](Tape& t, int self) {
    const Mat& s = t.val(self);
    t.accum(pa, (t.grad_of(self).array() * s.array() * (1.0 - s.array())).matrix());
  });
  return Var{a.tape, id};
}

Var softplus(Var a) {
  Mat y = (a.value().array().max(0.0) + (-a.value().array().abs()).exp().log1p()).matrix();
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id](Tape& t, int self) {
    Mat s = (1.0 / (1.0 + (-t.val(pa).array()).exp())).matrix();
    t.accum(pa, t.grad_of(self).cwiseProduct(s));
  });
  return Var{a.tape, id};
}

Var clamp(Var a, double lo, double hi) {
  int id = tp(a).push(a.value().cwiseMax(lo).cwiseMin(hi), {a.id},
                      [pa = a.id, lo, hi](Tape& t, int self) {
                        const auto& x = t.val(pa).array();
                        Mat mask = ((x > lo) && (x < hi)).cast<double>();
                        t.accum(pa, t.grad_of(self).cwiseProduct(mask));
                      });
  return Var{a.tape, id};
}

Var stop_gradient(Var a) { return tp(a).constant(a.value()); }

Var matmul(Var a, Var b) {
  int id = tp(a).push(a.value() * b.value(), {a.id, b.id},
                      [pa = a.id, pb = b.id](Tape& t, int self) {
                        const Mat& g = t.grad_of(self);
                        t.accum(pa, g * t.val(pb).transpose());
                        t.accum(pb, t.val(pa).transpose() * g);
                      });
  return Var{a.tape, id};
}

Var transpose(Var a) {
  int id = tp(a).push(a.value().transpose(), {a.id}, [pa = a.id](Tape& t, int self) {
    t.accum(pa, t.grad_of(self).transpose());
  });
  return Var{a.tape, id};
}

Var sum_all(Var a) {
  Mat y(1, 1);
  y(0, 0) = a.value().sum();
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id](Tape& t, int self) {
    double g = t.grad_of(self)(0, 0);
    t.accum(pa, Mat::Constant(t.val(pa).rows(), t.val(pa).cols(), g));
  });
  return Var{a.tape, id};
}

Var mean_all(Var a) { return muls(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var row_sum(Var a) {
  Mat y = a.value().rowwise().sum();
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);  // n x 1
    t.accum(pa, g.replicate(1, t.val(pa).cols()));
  });
  return Var{a.tape, id};
}

Var col_sum(Var a) {
  Mat y = a.value().colwise().sum();
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);  // 1 x m
    t.accum(pa, g.replicate(t.val(pa).rows(), 1));
  });
  return Var{a.tape, id};
}

Var add_colvec(Var a, Var v) {
  Mat y = a.value() + v.value().replicate(1, a.value().cols());
  int id = tp(a).push(std::move(y), {a.id, v.id}, [pa = a.id, pv = v.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    t.accum(pa, g);
    t.accum(pv, g.rowwise().sum());
  });
  return Var{a.tape, id};
}

Var add_rowvec(Var a, Var r) {
  Mat y = a.value() + r.value().replicate(a.value().rows(), 1);
  int id = tp(a).push(std::move(y), {a.id, r.id}, [pa = a.id, pr = r.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    t.accum(pa, g);
    t.accum(pr, g.colwise().sum());
  });
  return Var{a.tape, id};
}

Var mul_colvec(Var a, Var v) {
  Mat y = a.value().cwiseProduct(v.value().replicate(1, a.value().cols()));
  int id = tp(a).push(std::move(y), {a.id, v.id}, [pa = a.id, pv = v.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    t.accum(pa, g.cwiseProduct(t.val(pv).replicate(1, g.cols())));
    t.accum(pv, g.cwiseProduct(t.val(pa)).rowwise().sum());
  });
  return Var{a.tape, id};
}

Var mul_rowvec(Var a, Var r) {
  Mat y = a.value().cwiseProduct(r.value().replicate(a.value().rows(), 1));
  int id = tp(a).push(std::move(y), {a.id, r.id}, [pa = a.id, pr = r.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    t.accum(pa, g.cwiseProduct(t.val(pr).replicate(g.rows(), 1)));
    t.accum(pr, g.cwiseProduct(t.val(pa)).colwise().sum());
  });
  return Var{a.tape, id};
}

Var logsumexp_rows(Var a) {
  const Mat& x = a.value();
  Mat m = x.rowwise().maxCoeff();
  Mat y = ((x - m.replicate(1, x.cols())).array().exp().rowwise().sum().log()).matrix() + m;
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id](Tape& t, int self) {
    const Mat& g = t.grad_of(self);  // n x 1
    const Mat& x2 = t.val(pa);
    const Mat& lse = t.val(self);
    Mat soft = (x2 - lse.replicate(1, x2.cols())).array().exp().matrix();
    t.accum(pa, soft.cwiseProduct(g.replicate(1, x2.cols())));
  });
  return Var{a.tape, id};
}

Var log_softmax_rows(Var a) { return add_colvec(a, neg(logsumexp_rows(a))); }

Var gather_rows(Var a, std::vector<int> idx) {
  Mat y(static_cast<Eigen::Index>(idx.size()), a.value().cols());
  for (std::size_t i = 0; i < idx.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id, idx = std::move(idx)](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Mat d = Mat::Zero(t.val(pa).rows(), t.val(pa).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accum(pa, d);
  });
  return Var{a.tape, id};
}

Var gather_elems(Var a, std::vector<std::pair<int, int>> idx) {
  Mat y(static_cast<Eigen::Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = a.value()(idx[i].first, idx[i].second);
  int id = tp(a).push(std::move(y), {a.id}, [pa = a.id, idx = std::move(idx)](Tape& t, int self) {
    const Mat& g = t.grad_of(self);
    Mat d = Mat::Zero(t.val(pa).rows(), t.val(pa).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d(idx[i].first, idx[i].second) += g(static_cast<Eigen::Index>(i), 0);
    t.accum(pa, d);
  });
  return Var{a.tape, id};
}

Var vcat(const std::vector<Var>& parts) {
  assert(!parts.empty());
  Eigen::Index rows = 0;
  for (const Var& p : parts) rows += p.value().rows();
  Mat y(rows, parts[0].value().cols());
  Eigen::Index at = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  for (const Var& p : parts) {
    y.middleRows(at, p.value().rows()) = p.value();
    at += p.value().rows();
    ids.push_back(p.id);
    sizes.push_back(p.value().rows());
  }
  Tape& t0 = tp(parts[0]);
  int id = t0.push(std::move(y), ids,
                   [ids, sizes](Tape& t, int self) {
                     const Mat& g = t.grad_of(self);
                     Eigen::Index pos = 0;
                     for (std::size_t i = 0; i < ids.size(); ++i) {
                       t.accum(ids[i], g.middleRows(pos, sizes[i]));
                       pos += sizes[i];
                     }
                   });
  return Var{parts[0].tape, id};
}

std::shared_ptr<const ConvIndexMap> make_conv_index_map(int channels, int h, int w, int kernel,
                                                        int stride, int pad) {
  auto im = std::make_shared<ConvIndexMap>();
  int oh = (h + 2 * pad - kernel) / stride + 1;
  int ow = (w + 2 * pad - kernel) / stride + 1;
  im->k_rows = channels * kernel * kernel;
  im->n_pos = oh * ow;
  im->map.assign(static_cast<std::size_t>(im->k_rows) * im->n_pos, -1);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        int q = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            int iy = oy * stride - pad + ky;
            int ix = ox * stride - pad + kx;
            int pos = oy * ow + ox;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
              im->map[static_cast<std::size_t>(q) * im->n_pos + pos] = (c * h + iy) * w + ix;
          }
      }
  return im;
}

namespace {

// COLS(q, b*P + p) = X(b, map[q, p])
Mat gather_cols(const Mat& x, const ConvIndexMap& im) {
  const Eigen::Index bsz = x.rows();
  Mat cols = Mat::Zero(im.k_rows, bsz * im.n_pos);
  for (Eigen::Index b = 0; b < bsz; ++b)
    for (int q = 0; q < im.k_rows; ++q) {
      const int* row = im.map.data() + static_cast<std::size_t>(q) * im.n_pos;
      for (int p = 0; p < im.n_pos; ++p)
        if (row[p] >= 0) cols(q, b * im.n_pos + p) = x(b, row[p]);
    }
  return cols;
}

// X(b, map[q, p]) += COLS(q, b*P + p)
Mat scatter_cols(const Mat& cols, const ConvIndexMap& im, Eigen::Index bsz, Eigen::Index features) {
  Mat x = Mat::Zero(bsz, features);
  for (Eigen::Index b = 0; b < bsz; ++b)
    for (int q = 0; q < im.k_rows; ++q) {
      const int* row = im.map.data() + static_cast<std::size_t>(q) * im.n_pos;
      for (int p = 0; p < im.n_pos; ++p)
        if (row[p] >= 0) x(b, row[p]) += cols(q, b * im.n_pos + p);
    }
  return x;
}

// between "rows = samples, channel-major features" and "rows = channels, cols = b*P+p"
Mat to_channel_major(const Mat& x, int channels, int spatial) {
  Mat y(channels, x.rows() * spatial);
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    for (int c = 0; c < channels; ++c)
      for (int p = 0; p < spatial; ++p) y(c, b * spatial + p) = x(b, c * spatial + p);
  return y;
}

Mat from_channel_major(const Mat& y, int channels, int spatial) {
  Eigen::Index bsz = y.cols() / spatial;
  Mat x(bsz, static_cast<Eigen::Index>(channels) * spatial);
  for (Eigen::Index b = 0; b < bsz; ++b)
    for (int c = 0; c < channels; ++c)
      for (int p = 0; p < spatial; ++p) x(b, c * spatial + p) = y(c, b * spatial + p);
  return x;
}

}  // namespace

Var conv2d(Var x, Var w, Var b, const ConvGeom& g, std::shared_ptr<const ConvIndexMap> im) {
  const Mat& xv = x.value();
  const int P = g.out_h() * g.out_w();
  auto cols = std::make_shared<Mat>(gather_cols(xv, *im));
  Mat y = w.value() * (*cols);  // outC x B*P
  for (Eigen::Index c = 0; c < y.rows(); ++c) y.row(c).array() += b.value()(0, c);
  Mat out = from_channel_major(y, g.out_channels, P);
  int id = tp(x).push(std::move(out), {x.id, w.id, b.id},
                      [px = x.id, pw = w.id, pb = b.id, g, im, cols](Tape& t, int self) {
                        const int P2 = g.out_h() * g.out_w();
                        Mat gy = to_channel_major(t.grad_of(self), g.out_channels, P2);
                        if (t.needs_grad(pw)) t.accum(pw, gy * cols->transpose());
                        if (t.needs_grad(pb)) t.accum(pb, gy.rowwise().sum().transpose());
                        if (t.needs_grad(px)) {
                          Mat dcols = t.val(pw).transpose() * gy;
                          t.accum(px, scatter_cols(dcols, *im, t.val(px).rows(), t.val(px).cols()));
                        }
                      });
  return Var{x.tape, id};
}

Var conv2d_transpose(Var x, Var w, Var b, const ConvTGeom& g,
                     std::shared_ptr<const ConvIndexMap> im) {
  assert(g.out_pad < g.stride);
  const int P_in = g.in_h * g.in_w;
  const int P_out = g.out_h() * g.out_w();
  auto xmat = std::make_shared<Mat>(to_channel_major(x.value(), g.in_channels, P_in));
  Mat cols = w.value().transpose() * (*xmat);  // (outC*k*k) x B*P_in
  Mat out = scatter_cols(cols, *im, x.value().rows(), static_cast<Eigen::Index>(g.out_channels) * P_out);
  for (Eigen::Index bi = 0; bi < out.rows(); ++bi)
    for (int c = 0; c < g.out_channels; ++c)
      out.row(bi).segment(static_cast<Eigen::Index>(c) * P_out, P_out).array() += b.value()(0, c);
  int id = tp(x).push(std::move(out), {x.id, w.id, b.id},
                      [px = x.id, pw = w.id, pb = b.id, g, im, xmat](Tape& t, int self) {
                        const int Pi = g.in_h * g.in_w;
                        const int Po = g.out_h() * g.out_w();
                        const Mat& gy = t.grad_of(self);
                        if (t.needs_grad(pb)) {
                          Mat db = Mat::Zero(1, g.out_channels);
                          for (Eigen::Index bi = 0; bi < gy.rows(); ++bi)
                            for (int c = 0; c < g.out_channels; ++c)
                              db(0, c) += gy.row(bi).segment(static_cast<Eigen::Index>(c) * Po, Po).sum();
                          t.accum(pb, db);
                        }
                        Mat dcols = gather_cols(gy, *im);  // (outC*k*k) x B*P_in
                        if (t.needs_grad(pw)) t.accum(pw, (*xmat) * dcols.transpose());
                        if (t.needs_grad(px)) {
                          Mat dxmat = t.val(pw) * dcols;  // inC x B*P_in
                          t.accum(px, from_channel_major(dxmat, g.in_channels, Pi));
                        }
                      });
  return Var{x.tape, id};
}

Var batch_norm(Var x, Var gamma, Var beta, int channels, int spatial, double eps, bool training,
               Mat* running_mean, Mat* running_var, double momentum) {
  const Mat& xv = x.value();
  const Eigen::Index bsz = xv.rows();
  const double m = static_cast<double>(bsz) * spatial;
  Vec mu(channels), var(channels);
  if (training) {
    for (int c = 0; c < channels; ++c) {
      double s = 0.0, s2 = 0.0;
      for (Eigen::Index b = 0; b < bsz; ++b) {
        auto seg = xv.row(b).segment(static_cast<Eigen::Index>(c) * spatial, spatial);
        s += seg.sum();
        s2 += seg.squaredNorm();
      }
      mu[c] = s / m;
      var[c] = s2 / m - mu[c] * mu[c];
    }
    if (running_mean != nullptr && running_var != nullptr) {
      for (int c = 0; c < channels; ++c) {
        (*running_mean)(0, c) = (1.0 - momentum) * (*running_mean)(0, c) + momentum * mu[c];
        (*running_var)(0, c) = (1.0 - momentum) * (*running_var)(0, c) + momentum * var[c];
      }
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mu[c] = (*running_mean)(0, c);
      var[c] = (*running_var)(0, c);
    }
  }
  Vec inv_std(channels);
  for (int c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  auto xhat = std::make_shared<Mat>(bsz, xv.cols());
  Mat y(bsz, xv.cols());
  for (Eigen::Index b = 0; b < bsz; ++b)
    for (int c = 0; c < channels; ++c)
      for (int p = 0; p < spatial; ++p) {
        Eigen::Index j = static_cast<Eigen::Index>(c) * spatial + p;
        (*xhat)(b, j) = (xv(b, j) - mu[c]) * inv_std[c];
        y(b, j) = gamma.value()(0, c) * (*xhat)(b, j) + beta.value()(0, c);
      }
  int id = tp(x).push(std::move(y), {x.id, gamma.id, beta.id},
                      [px = x.id, pg = gamma.id, pbt = beta.id, channels, spatial, inv_std, xhat,
                       training, m](Tape& t, int self) {
                        const Mat& gy = t.grad_of(self);
                        const Eigen::Index bsz2 = gy.rows();
                        Mat dgamma = Mat::Zero(1, channels), dbeta = Mat::Zero(1, channels);
                        for (int c = 0; c < channels; ++c)
                          for (Eigen::Index b = 0; b < bsz2; ++b) {
                            auto gseg = gy.row(b).segment(static_cast<Eigen::Index>(c) * spatial, spatial);
                            auto xseg = xhat->row(b).segment(static_cast<Eigen::Index>(c) * spatial, spatial);
                            dbeta(0, c) += gseg.sum();
                            dgamma(0, c) += gseg.dot(xseg);
                          }
                        if (t.needs_grad(pg)) t.accum(pg, dgamma);
                        if (t.needs_grad(pbt)) t.accum(pbt, dbeta);
                        if (t.needs_grad(px)) {
                          Mat dx(bsz2, gy.cols());
                          const Mat& gv = t.val(pg);
                          for (int c = 0; c < channels; ++c) {
                            double k = gv(0, c) * inv_std[c];
                            double mean_dy = dbeta(0, c) / m;
                            double mean_dyx = dgamma(0, c) / m;
                            for (Eigen::Index b = 0; b < bsz2; ++b)
                              for (int p = 0; p < spatial; ++p) {
                                Eigen::Index j = static_cast<Eigen::Index>(c) * spatial + p;
                                if (training)
                                  dx(b, j) = k * (gy(b, j) - mean_dy - (*xhat)(b, j) * mean_dyx);
                                else
                                  dx(b, j) = k * gy(b, j);
                              }
                          }
                          t.accum(px, dx);
                        }
                      });
  return Var{x.tape, id};
}

}  // namespace taxonet::ad
