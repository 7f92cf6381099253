#include "exdrop/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace exdrop {

namespace {

using detail::Node;

std::shared_ptr<Node> make_node(Matrix value, const char* tag,
                                std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->grad = Matrix(value.rows(), value.cols());
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
  n->op_tag = tag;
  return n;
}

Matrix scalar(double v) { return Matrix(1, 1, std::vector<double>{v}); }

void accumulate(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

}  // namespace

Var leaf(Matrix value) {
  return Var(make_node(std::move(value), "leaf", {}, nullptr));
}

void backward(const Var& loss) {
  if (loss.empty()) {
    throw std::invalid_argument("backward: empty Var");
  }
  if (loss.value().rows() != 1 || loss.value().cols() != 1) {
    throw std::invalid_argument("backward: loss must be 1x1, got " +
                                loss.value().shape_str());
  }

  // Iterative DFS post-order gives reverse topological order when walked
  // backwards. Recursion would overflow on long training graphs.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Overwrite semantics: zero every reachable grad before seeding, so a
  // second backward() reproduces rather than doubles the gradients.
  for (Node* n : order) {
    std::fill(n->grad.data(), n->grad.data() + n->grad.size(), 0.0);
  }
  loss.node()->grad(0, 0) = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                        const Matrix& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double fp = f(probe);
    probe.data()[i] = orig - h;
    const double fm = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Var matmul(const Var& a, const Var& b) {
  auto node = make_node(matmul(a.value(), b.value()), "matmul",
                        {a.shared(), b.shared()}, [](Node& self) {
                          Node* pa = self.parents[0].get();
                          Node* pb = self.parents[1].get();
                          accumulate(pa->grad, matmul(self.grad, transpose(pb->value)));
                          accumulate(pb->grad, matmul(transpose(pa->value), self.grad));
                        });
  return Var(node);
}

Var transpose(const Var& a) {
  auto node = make_node(transpose(a.value()), "transpose", {a.shared()},
                        [](Node& self) {
                          accumulate(self.parents[0]->grad, transpose(self.grad));
                        });
  return Var(node);
}

Var add(const Var& a, const Var& b) {
  auto node = make_node(add(a.value(), b.value()), "add",
                        {a.shared(), b.shared()}, [](Node& self) {
                          accumulate(self.parents[0]->grad, self.grad);
                          accumulate(self.parents[1]->grad, self.grad);
                        });
  return Var(node);
}

Var sub(const Var& a, const Var& b) {
  auto node = make_node(sub(a.value(), b.value()), "sub",
                        {a.shared(), b.shared()}, [](Node& self) {
                          accumulate(self.parents[0]->grad, self.grad);
                          accumulate(self.parents[1]->grad, scale(self.grad, -1.0));
                        });
  return Var(node);
}

Var scale(const Var& a, double s) {
  auto node = make_node(scale(a.value(), s), "scale", {a.shared()},
                        [s](Node& self) {
                          accumulate(self.parents[0]->grad, scale(self.grad, s));
                        });
  return Var(node);
}

Var hadamard(const Var& a, const Var& b) {
  auto node = make_node(hadamard(a.value(), b.value()), "hadamard",
                        {a.shared(), b.shared()}, [](Node& self) {
                          Node* pa = self.parents[0].get();
                          Node* pb = self.parents[1].get();
                          accumulate(pa->grad, hadamard(self.grad, pb->value));
                          accumulate(pb->grad, hadamard(self.grad, pa->value));
                        });
  return Var(node);
}

Var relu(const Var& a) {
  auto node = make_node(relu(a.value()), "relu", {a.shared()}, [](Node& self) {
    Node* pa = self.parents[0].get();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa->value.data()[i] > 0.0) pa->grad.data()[i] += self.grad.data()[i];
    }
  });
  return Var(node);
}

Var row_softmax(const Var& s) {
  auto node = make_node(row_softmax(s.value()), "row_softmax", {s.shared()},
                        [](Node& self) {
                          Node* ps = self.parents[0].get();
                          const Matrix& y = self.value;
                          const Matrix& g = self.grad;
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              dot += g(i, j) * y(i, j);
                            }
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              ps->grad(i, j) += y(i, j) * (g(i, j) - dot);
                            }
                          }
                        });
  return Var(node);
}

Var row_normalize(const Var& x) {
  auto node = make_node(row_normalize(x.value()), "row_normalize", {x.shared()},
                        [](Node& self) {
                          Node* px = self.parents[0].get();
                          const Matrix& y = self.value;
                          const Matrix& g = self.grad;
                          for (std::size_t i = 0; i < y.rows(); ++i) {
                            double s = 0.0;
                            for (std::size_t j = 0; j < y.cols(); ++j) s += px->value(i, j);
                            double dot = 0.0;
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              dot += g(i, j) * y(i, j);
                            }
                            for (std::size_t j = 0; j < y.cols(); ++j) {
                              px->grad(i, j) += (g(i, j) - dot) / s;
                            }
                          }
                        });
  return Var(node);
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  auto node = make_node(
      layer_norm(x.value(), gain.value(), bias.value()), "layer_norm",
      {x.shared(), gain.shared(), bias.shared()}, [](Node& self) {
        Node* px = self.parents[0].get();
        Node* pg = self.parents[1].get();
        Node* pb = self.parents[2].get();
        const Matrix& xv = px->value;
        const Matrix& gv = pg->value;
        const Matrix& g = self.grad;
        const std::size_t n = xv.cols();
        const double dn = static_cast<double>(n);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
          double mean = 0.0;
          for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
          mean /= dn;
          double var = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = xv(i, j) - mean;
            var += d * d;
          }
          var /= dn;
          const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          // xhat = normalized pre-gain value; dy = upstream grad through gain.
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xv(i, j) - mean) * inv;
            const double dy = g(i, j) * gv(0, j);
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
            pg->grad(0, j) += g(i, j) * xhat;
            pb->grad(0, j) += g(i, j);
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double xhat = (xv(i, j) - mean) * inv;
            const double dy = g(i, j) * gv(0, j);
            px->grad(i, j) += inv * (dy - sum_dy / dn - xhat * sum_dy_xhat / dn);
          }
        }
      });
  return Var(node);
}

Var diag_part(const Var& a) {
  auto node = make_node(diag_part(a.value()), "diag_part", {a.shared()},
                        [](Node& self) {
                          Node* pa = self.parents[0].get();
                          for (std::size_t i = 0; i < self.grad.rows(); ++i) {
                            pa->grad(i, i) += self.grad(i, i);
                          }
                        });
  return Var(node);
}

Var trace(const Var& a) {
  auto node = make_node(scalar(trace(a.value())), "trace", {a.shared()},
                        [](Node& self) {
                          Node* pa = self.parents[0].get();
                          const double g = self.grad(0, 0);
                          for (std::size_t i = 0; i < pa->value.rows(); ++i) {
                            pa->grad(i, i) += g;
                          }
                        });
  return Var(node);
}

Var trace_product(const Var& a, const Var& b) {
  auto node = make_node(scalar(trace_product(a.value(), b.value())),
                        "trace_product", {a.shared(), b.shared()},
                        [](Node& self) {
                          Node* pa = self.parents[0].get();
                          Node* pb = self.parents[1].get();
                          const double g = self.grad(0, 0);
                          accumulate(pa->grad, scale(transpose(pb->value), g));
                          accumulate(pb->grad, scale(transpose(pa->value), g));
                        });
  return Var(node);
}

Var frobenius_sq(const Var& a) {
  auto node = make_node(scalar(frobenius_sq(a.value())), "frobenius_sq",
                        {a.shared()}, [](Node& self) {
                          Node* pa = self.parents[0].get();
                          accumulate(pa->grad, scale(pa->value, 2.0 * self.grad(0, 0)));
                        });
  return Var(node);
}

Var add_rowvec(const Var& x, const Var& b) {
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw std::invalid_argument("add_rowvec: incompatible shapes " +
                                xv.shape_str() + " and " + bv.shape_str());
  }
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  }
  auto node = make_node(std::move(out), "add_rowvec", {x.shared(), b.shared()},
                        [](Node& self) {
                          Node* px = self.parents[0].get();
                          Node* pb = self.parents[1].get();
                          accumulate(px->grad, self.grad);
                          for (std::size_t i = 0; i < self.grad.rows(); ++i) {
                            for (std::size_t j = 0; j < self.grad.cols(); ++j) {
                              pb->grad(0, j) += self.grad(i, j);
                            }
                          }
                        });
  return Var(node);
}

Var vstack(const Var& top, const Var& bottom) {
  auto node = make_node(vstack(top.value(), bottom.value()), "vstack",
                        {top.shared(), bottom.shared()}, [](Node& self) {
                          Node* pt = self.parents[0].get();
                          Node* pb = self.parents[1].get();
                          const std::size_t nt = pt->value.rows();
                          accumulate(pt->grad, take_rows(self.grad, 0, nt));
                          accumulate(pb->grad,
                                     take_rows(self.grad, nt, self.grad.rows()));
                        });
  return Var(node);
}

Var hstack(const Var& left, const Var& right) {
  auto node = make_node(hstack(left.value(), right.value()), "hstack",
                        {left.shared(), right.shared()}, [](Node& self) {
                          Node* pl = self.parents[0].get();
                          Node* pr = self.parents[1].get();
                          const std::size_t nl = pl->value.cols();
                          accumulate(pl->grad, take_cols(self.grad, 0, nl));
                          accumulate(pr->grad,
                                     take_cols(self.grad, nl, self.grad.cols()));
                        });
  return Var(node);
}

Var take_row(const Var& a, std::size_t r) {
  auto node = make_node(take_row(a.value(), r), "take_row", {a.shared()},
                        [r](Node& self) {
                          Node* pa = self.parents[0].get();
                          for (std::size_t j = 0; j < self.grad.cols(); ++j) {
                            pa->grad(r, j) += self.grad(0, j);
                          }
                        });
  return Var(node);
}

Var take_rows(const Var& a, std::size_t r0, std::size_t r1) {
  auto node = make_node(take_rows(a.value(), r0, r1), "take_rows", {a.shared()},
                        [r0](Node& self) {
                          Node* pa = self.parents[0].get();
                          for (std::size_t i = 0; i < self.grad.rows(); ++i) {
                            for (std::size_t j = 0; j < self.grad.cols(); ++j) {
                              pa->grad(r0 + i, j) += self.grad(i, j);
                            }
                          }
                        });
  return Var(node);
}

Var take_cols(const Var& a, std::size_t c0, std::size_t c1) {
  auto node = make_node(take_cols(a.value(), c0, c1), "take_cols", {a.shared()},
                        [c0](Node& self) {
                          Node* pa = self.parents[0].get();
                          for (std::size_t i = 0; i < self.grad.rows(); ++i) {
                            for (std::size_t j = 0; j < self.grad.cols(); ++j) {
                              pa->grad(i, c0 + j) += self.grad(i, j);
                            }
                          }
                        });
  return Var(node);
}

Var sum(const std::vector<Var>& terms) {
  if (terms.empty()) throw std::invalid_argument("sum: no terms");
  Matrix out = terms[0].value();
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(terms.size());
  parents.push_back(terms[0].shared());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    if (!terms[t].value().same_shape(out)) {
      throw std::invalid_argument("sum: shape mismatch at term " + std::to_string(t));
    }
    accumulate(out, terms[t].value());
    parents.push_back(terms[t].shared());
  }
  auto node = make_node(std::move(out), "sum", std::move(parents),
                        [](Node& self) {
                          for (auto& p : self.parents) accumulate(p->grad, self.grad);
                        });
  return Var(node);
}

Var concat_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("concat_rows: no rows");
  const std::size_t cols = rows[0].value().cols();
  Matrix out(rows.size(), cols);
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& rv = rows[i].value();
    if (rv.rows() != 1 || rv.cols() != cols) {
      throw std::invalid_argument("concat_rows: row " + std::to_string(i) +
                                  " has shape " + rv.shape_str());
    }
    std::copy(rv.data(), rv.data() + cols, out.data() + i * cols);
    parents.push_back(rows[i].shared());
  }
  auto node = make_node(std::move(out), "concat_rows", std::move(parents),
                        [](Node& self) {
                          for (std::size_t i = 0; i < self.parents.size(); ++i) {
                            Node* p = self.parents[i].get();
                            for (std::size_t j = 0; j < self.grad.cols(); ++j) {
                              p->grad(0, j) += self.grad(i, j);
                            }
                          }
                        });
  return Var(node);
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Matrix& z = logits.value();
  if (labels.size() != z.rows()) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + z.shape_str() + " logits");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols()) {
      throw std::invalid_argument("softmax_cross_entropy: label out of range at row " +
                                  std::to_string(i));
    }
  }
  const Matrix probs = row_softmax(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    // -log p equals lse(z) - z_label; computing it from the stabilized
    // softmax keeps one code path.
    loss -= std::log(probs(i, static_cast<std::size_t>(labels[i])));
  }
  loss /= static_cast<double>(z.rows());

  auto node = make_node(scalar(loss), "softmax_cross_entropy", {logits.shared()},
                        [probs, labels](Node& self) {
                          Node* pz = self.parents[0].get();
                          const double g = self.grad(0, 0) /
                                           static_cast<double>(probs.rows());
                          for (std::size_t i = 0; i < probs.rows(); ++i) {
                            for (std::size_t j = 0; j < probs.cols(); ++j) {
                              const double onehot =
                                  (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                              pz->grad(i, j) += g * (probs(i, j) - onehot);
                            }
                          }
                        });
  return Var(node);
}

}  // namespace exdrop
