#include "metdrive/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace metdrive::ad {

namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid() || v.tape() == nullptr) {
    throw std::logic_error("autodiff: operation on an unbound Var");
  }
  return *v.tape();
}

bool needs(const Var& v) { return v.requires_grad(); }

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
  }
}

}  // namespace

void Node::accumulate(const Mat& g) { accumulate_expr(g); }

Parameter::Parameter(std::string name, Mat init)
    : name_(std::move(name)), node_(std::make_shared<Node>()) {
  node_->value = std::move(init);
  node_->requires_grad = true;
}

Mat& Parameter::grad() {
  if (node_->grad.size() == 0) {
    node_->grad = Mat::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

void Parameter::zero_grad() { node_->grad.resize(0, 0); }

Var Tape::constant(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(this, std::move(node));
}

Var Tape::param(Parameter& p) { return Var(this, p.node()); }

Var Tape::emit(Mat value, bool any_input_requires_grad,
               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (record_ && any_input_requires_grad) {
    node->requires_grad = true;
    Node* self = node.get();
    node->backward = [bw = std::move(backward), self]() { bw(*self); };
    nodes_.push_back(node);
  }
  return Var(this, std::move(node));
}

void Tape::backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) {
    throw std::invalid_argument("autodiff: backward requires a scalar root");
  }
  if (!root.requires_grad()) {
    return;
  }
  root.node()->accumulate(Mat::Ones(1, 1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) {
      n.backward();
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("autodiff: matmul inner dimension mismatch");
  }
  auto na = a.node();
  auto nb = b.node();
  Mat v = a.value() * b.value();
  return tape_of(a).emit(std::move(v), needs(a) || needs(b), [na, nb](Node& out) {
    if (na->requires_grad) na->accumulate_expr(out.grad * nb->value.transpose());
    if (nb->requires_grad) nb->accumulate_expr(na->value.transpose() * out.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("autodiff: matmul_nt inner dimension mismatch");
  }
  auto na = a.node();
  auto nb = b.node();
  Mat v = a.value() * b.value().transpose();
  return tape_of(a).emit(std::move(v), needs(a) || needs(b), [na, nb](Node& out) {
    if (na->requires_grad) na->accumulate_expr(out.grad * nb->value);
    if (nb->requires_grad) nb->accumulate_expr(out.grad.transpose() * na->value);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto na = a.node();
  auto nb = b.node();
  Mat v = a.value() + b.value();
  return tape_of(a).emit(std::move(v), needs(a) || needs(b), [na, nb](Node& out) {
    if (na->requires_grad) na->accumulate(out.grad);
    if (nb->requires_grad) nb->accumulate(out.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto na = a.node();
  auto nb = b.node();
  Mat v = a.value() - b.value();
  return tape_of(a).emit(std::move(v), needs(a) || needs(b), [na, nb](Node& out) {
    if (na->requires_grad) na->accumulate(out.grad);
    if (nb->requires_grad) nb->accumulate_expr(-out.grad);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("autodiff: add_rowvec expects a 1xC row");
  }
  auto na = a.node();
  auto nr = row.node();
  Mat v = a.value().rowwise() + row.value().row(0);
  return tape_of(a).emit(std::move(v), needs(a) || needs(row), [na, nr](Node& out) {
    if (na->requires_grad) na->accumulate(out.grad);
    if (nr->requires_grad) nr->accumulate_expr(out.grad.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  auto na = a.node();
  Mat v = a.value() * s;
  return tape_of(a).emit(std::move(v), needs(a), [na, s](Node& out) {
    na->accumulate_expr(out.grad * s);
  });
}

Var hadamard(const Var& a, const Var& b) {
  check_same_shape(a, b, "hadamard");
  auto na = a.node();
  auto nb = b.node();
  Mat v = a.value().cwiseProduct(b.value());
  return tape_of(a).emit(std::move(v), needs(a) || needs(b), [na, nb](Node& out) {
    if (na->requires_grad) na->accumulate_expr(out.grad.cwiseProduct(nb->value));
    if (nb->requires_grad) nb->accumulate_expr(out.grad.cwiseProduct(na->value));
  });
}

Var silu(const Var& a) {
  auto na = a.node();
  Mat sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Mat v = a.value().cwiseProduct(sig);
  return tape_of(a).emit(std::move(v), needs(a), [na, sig](Node& out) {
    const auto x = na->value.array();
    const auto s = sig.array();
    na->accumulate_expr((out.grad.array() * (s + x * s * (1.0 - s))).matrix());
  });
}

Var sigmoid(const Var& a) {
  auto na = a.node();
  Mat v = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return tape_of(a).emit(std::move(v), needs(a), [na](Node& out) {
    const auto s = out.value.array();
    na->accumulate_expr((out.grad.array() * s * (1.0 - s)).matrix());
  });
}

Var tanh(const Var& a) {
  auto na = a.node();
  Mat v = a.value().array().tanh().matrix();
  return tape_of(a).emit(std::move(v), needs(a), [na](Node& out) {
    const auto y = out.value.array();
    na->accumulate_expr((out.grad.array() * (1.0 - y * y)).matrix());
  });
}

Var abs(const Var& a) {
  auto na = a.node();
  Mat v = a.value().cwiseAbs();
  return tape_of(a).emit(std::move(v), needs(a), [na](Node& out) {
    const auto x = na->value.array();
    Mat sign = ((x > 0.0).cast<double>() - (x < 0.0).cast<double>()).matrix();
    na->accumulate_expr(out.grad.cwiseProduct(sign));
  });
}

Var sum(const Var& a) {
  auto na = a.node();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return tape_of(a).emit(std::move(v), needs(a), [na](Node& out) {
    na->accumulate_expr(Mat::Constant(na->value.rows(), na->value.cols(), out.grad(0, 0)));
  });
}

Var one_minus(const Var& a) {
  auto na = a.node();
  Mat v = (1.0 - a.value().array()).matrix();
  return tape_of(a).emit(std::move(v), needs(a), [na](Node& out) {
    na->accumulate_expr(-out.grad);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols) {
    throw std::invalid_argument("autodiff: layer_norm gain/bias must be 1xC");
  }
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Mat v = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  v.rowwise() += bias.value().row(0);
  auto nx = x.node();
  auto ng = gain.node();
  auto nb = bias.node();
  const bool any = needs(x) || needs(gain) || needs(bias);
  return tape_of(x).emit(std::move(v), any, [nx, ng, nb, xhat, inv_std](Node& out) {
    const Mat& g = out.grad;
    if (ng->requires_grad) ng->accumulate_expr(g.cwiseProduct(xhat).colwise().sum());
    if (nb->requires_grad) nb->accumulate_expr(g.colwise().sum());
    if (nx->requires_grad) {
      Mat dxhat = (g.array().rowwise() * ng->value.row(0).array()).matrix();
      Mat dx(g.rows(), g.cols());
      for (Index r = 0; r < g.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
      }
      nx->accumulate(dx);
    }
  });
}

Var gather_rows(const Var& x, std::vector<Index> indices) {
  Mat v(static_cast<Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= x.rows()) {
      throw std::out_of_range("autodiff: gather_rows index out of range");
    }
    v.row(static_cast<Index>(i)) = x.value().row(indices[i]);
  }
  auto nx = x.node();
  return tape_of(x).emit(std::move(v), needs(x), [nx, idx = std::move(indices)](Node& out) {
    Mat g = Mat::Zero(nx->value.rows(), nx->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      g.row(idx[i]) += out.grad.row(static_cast<Index>(i));
    }
    nx->accumulate(g);
  });
}

Var slice_rows(const Var& x, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > x.rows()) {
    throw std::out_of_range("autodiff: slice_rows out of range");
  }
  auto nx = x.node();
  Mat v = x.value().middleRows(first, count);
  return tape_of(x).emit(std::move(v), needs(x), [nx, first, count](Node& out) {
    if (nx->grad.size() == 0) nx->grad = Mat::Zero(nx->value.rows(), nx->value.cols());
    nx->grad.middleRows(first, count) += out.grad;
  });
}

Var slice_cols(const Var& x, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > x.cols()) {
    throw std::out_of_range("autodiff: slice_cols out of range");
  }
  auto nx = x.node();
  Mat v = x.value().middleCols(first, count);
  return tape_of(x).emit(std::move(v), needs(x), [nx, first, count](Node& out) {
    if (nx->grad.size() == 0) nx->grad = Mat::Zero(nx->value.rows(), nx->value.cols());
    nx->grad.middleCols(first, count) += out.grad;
  });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: hconcat of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool any = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("autodiff: hconcat row mismatch");
    cols += p.cols();
    any = any || needs(p);
  }
  Mat v(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    nodes.push_back(p.node());
  }
  return tape_of(parts.front()).emit(std::move(v), any, [nodes](Node& out) {
    Index c0 = 0;
    for (const auto& n : nodes) {
      const Index w = n->value.cols();
      if (n->requires_grad) n->accumulate_expr(out.grad.middleCols(c0, w));
      c0 += w;
    }
  });
}

Var vconcat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: vconcat of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool any = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("autodiff: vconcat column mismatch");
    rows += p.rows();
    any = any || needs(p);
  }
  Mat v(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    nodes.push_back(p.node());
  }
  return tape_of(parts.front()).emit(std::move(v), any, [nodes](Node& out) {
    Index r0 = 0;
    for (const auto& n : nodes) {
      const Index h = n->value.rows();
      if (n->requires_grad) n->accumulate_expr(out.grad.middleRows(r0, h));
      r0 += h;
    }
  });
}

Var group_mean_rows(const Var& x, Index group_size) {
  if (group_size <= 0 || x.rows() % group_size != 0) {
    throw std::invalid_argument("autodiff: group_mean_rows size does not divide rows");
  }
  const Index groups = x.rows() / group_size;
  Mat v(groups, x.cols());
  for (Index g = 0; g < groups; ++g) {
    v.row(g) = x.value().middleRows(g * group_size, group_size).colwise().mean();
  }
  auto nx = x.node();
  return tape_of(x).emit(std::move(v), needs(x), [nx, group_size](Node& out) {
    Mat g(nx->value.rows(), nx->value.cols());
    const double inv = 1.0 / static_cast<double>(group_size);
    for (Index r = 0; r < g.rows(); ++r) g.row(r) = out.grad.row(r / group_size) * inv;
    nx->accumulate(g);
  });
}

Var im2col(const Var& x, Index n_images, Index height, Index width, Index channels,
           Index kernel, Index stride, Index pad) {
  if (x.rows() != n_images * height * width || x.cols() != channels) {
    throw std::invalid_argument("autodiff: im2col input shape mismatch");
  }
  const Index out_h = (height + 2 * pad - kernel) / stride + 1;
  const Index out_w = (width + 2 * pad - kernel) / stride + 1;
  if (out_h <= 0 || out_w <= 0) {
    throw std::invalid_argument("autodiff: im2col kernel larger than padded input");
  }
  const Index patch = kernel * kernel * channels;
  // Source row for each (output row, kernel tap), -1 for padding.
  std::vector<Index> source(static_cast<std::size_t>(n_images * out_h * out_w * kernel * kernel));
  Mat v = Mat::Zero(n_images * out_h * out_w, patch);
  std::size_t s = 0;
  for (Index n = 0; n < n_images; ++n) {
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        const Index orow = (n * out_h + oy) * out_w + ox;
        for (Index ky = 0; ky < kernel; ++ky) {
          for (Index kx = 0; kx < kernel; ++kx, ++s) {
            const Index iy = oy * stride + ky - pad;
            const Index ix = ox * stride + kx - pad;
            if (iy < 0 || iy >= height || ix < 0 || ix >= width) {
              source[s] = -1;
              continue;
            }
            const Index irow = (n * height + iy) * width + ix;
            source[s] = irow;
            v.block(orow, (ky * kernel + kx) * channels, 1, channels) = x.value().row(irow);
          }
        }
      }
    }
  }
  auto nx = x.node();
  const Index taps = kernel * kernel;
  return tape_of(x).emit(std::move(v), needs(x),
                         [nx, source = std::move(source), taps, channels](Node& out) {
    Mat g = Mat::Zero(nx->value.rows(), nx->value.cols());
    for (std::size_t i = 0; i < source.size(); ++i) {
      if (source[i] < 0) continue;
      const Index orow = static_cast<Index>(i) / taps;
      const Index tap = static_cast<Index>(i) % taps;
      g.row(source[i]) += out.grad.block(orow, tap * channels, 1, channels);
    }
    nx->accumulate(g);
  });
}

Var im2col_1d(const Var& x, Index n_seq, Index length, Index channels, Index kernel) {
  if (kernel % 2 == 0) {
    throw std::invalid_argument("autodiff: im2col_1d requires an odd kernel");
  }
  if (x.rows() != n_seq * length || x.cols() != channels) {
    throw std::invalid_argument("autodiff: im2col_1d input shape mismatch");
  }
  const Index half = kernel / 2;
  Mat v = Mat::Zero(n_seq * length, kernel * channels);
  for (Index n = 0; n < n_seq; ++n) {
    for (Index t = 0; t < length; ++t) {
      for (Index j = 0; j < kernel; ++j) {
        const Index src = t + j - half;
        if (src < 0 || src >= length) continue;
        v.block(n * length + t, j * channels, 1, channels) = x.value().row(n * length + src);
      }
    }
  }
  auto nx = x.node();
  return tape_of(x).emit(std::move(v), needs(x),
                         [nx, n_seq, length, channels, kernel, half](Node& out) {
    Mat g = Mat::Zero(nx->value.rows(), nx->value.cols());
    for (Index n = 0; n < n_seq; ++n) {
      for (Index t = 0; t < length; ++t) {
        for (Index j = 0; j < kernel; ++j) {
          const Index src = t + j - half;
          if (src < 0 || src >= length) continue;
          g.row(n * length + src) += out.grad.block(n * length + t, j * channels, 1, channels);
        }
      }
    }
    nx->accumulate(g);
  });
}

Mat softmax_rows(const Mat& scores) {
  Mat out(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    out.row(r) = (scores.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var grouped_attention(const Var& q, const Var& k, const Var& v, Index groups, Mat* weights) {
  if (groups <= 0 || q.rows() % groups != 0 || k.rows() % groups != 0 ||
      k.rows() != v.rows() || q.cols() != k.cols()) {
    throw std::invalid_argument("autodiff: grouped_attention shape mismatch");
  }
  const Index nq = q.rows() / groups;
  const Index nk = k.rows() / groups;
  const Index dv = v.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat attn(groups * nq, nk);
  Mat out(groups * nq, dv);
  for (Index g = 0; g < groups; ++g) {
    const Mat scores =
        (q.value().middleRows(g * nq, nq) * k.value().middleRows(g * nk, nk).transpose()) *
        inv_sqrt_d;
    attn.middleRows(g * nq, nq) = softmax_rows(scores);
    out.middleRows(g * nq, nq) = attn.middleRows(g * nq, nq) * v.value().middleRows(g * nk, nk);
  }
  if (weights != nullptr) *weights = attn;
  auto nqn = q.node();
  auto nkn = k.node();
  auto nvn = v.node();
  const bool any = needs(q) || needs(k) || needs(v);
  return tape_of(q).emit(std::move(out), any,
                         [nqn, nkn, nvn, attn, groups, nq, nk, inv_sqrt_d](Node& o) {
    Mat dq = Mat::Zero(nqn->value.rows(), nqn->value.cols());
    Mat dk = Mat::Zero(nkn->value.rows(), nkn->value.cols());
    Mat dv = Mat::Zero(nvn->value.rows(), nvn->value.cols());
    for (Index g = 0; g < groups; ++g) {
      const auto a = attn.middleRows(g * nq, nq);
      const auto go = o.grad.middleRows(g * nq, nq);
      const auto qg = nqn->value.middleRows(g * nq, nq);
      const auto kg = nkn->value.middleRows(g * nk, nk);
      const auto vg = nvn->value.middleRows(g * nk, nk);
      dv.middleRows(g * nk, nk) += a.transpose() * go;
      const Mat da = go * vg.transpose();
      Mat ds(nq, nk);
      for (Index r = 0; r < nq; ++r) {
        const double dot = da.row(r).dot(a.row(r));
        ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
      }
      ds *= inv_sqrt_d;
      dq.middleRows(g * nq, nq) += ds * kg;
      dk.middleRows(g * nk, nk) += ds.transpose() * qg;
    }
    if (nqn->requires_grad) nqn->accumulate(dq);
    if (nkn->requires_grad) nkn->accumulate(dk);
    if (nvn->requires_grad) nvn->accumulate(dv);
  });
}

}  // namespace metdrive::ad
