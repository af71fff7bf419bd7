#include "prefillsim/hybrid_numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "prefillsim/errors.hpp"
#include "prefillsim/rng.hpp"

namespace prefillsim::numerics {

namespace {

constexpr std::uint64_t kDomainParams = 0x70617261ULL;
constexpr std::uint64_t kDomainInput = 0x696e7075ULL;

// out[out_r0 + i] = a[a_r0 + i] * w (+ residual[res_r0 + i]) for i < count.
// The dot product is always finished before the residual is added, and the
// residual element is read before its slot is written, so `residual` may
// alias `out`.
void gemm_rows(const Matrix& a, std::size_t a_r0, std::size_t count, const Matrix& w, Matrix& out,
               std::size_t out_r0, const Matrix* residual = nullptr, std::size_t res_r0 = 0) {
  const std::size_t k = w.rows();
  const std::size_t m = w.cols();
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a(a_r0 + i, t) * w(t, j);
      out(out_r0 + i, j) = residual != nullptr ? acc + (*residual)(res_r0 + i, j) : acc;
    }
  }
}

double silu(double g) { return g / (1.0 + std::exp(-g)); }

void copy_rows(const Matrix& src, std::size_t src_r0, std::size_t count, Matrix& dst, std::size_t dst_r0) {
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = src.row(src_r0 + i);
    std::copy(s.begin(), s.end(), dst.row(dst_r0 + i).begin());
  }
}

// Single-head causal attention over all rows. qkv holds [q | k | v].
// Scores are materialized one query row at a time.
TrackedMatrix attention(const Matrix& qkv, std::size_t h, ScratchTracker& tracker) {
  const std::size_t n = qkv.rows();
  TrackedMatrix out(tracker, "attn", n, h);
  TrackedMatrix scores(tracker, "scores_row", 1, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  auto& s = scores.get();
  auto& o = out.get();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j <= i; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < h; ++d) dot += qkv(i, d) * qkv(j, h + d);
      s(0, j) = dot * scale;
      mx = std::max(mx, s(0, j));
    }
    double denom = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      s(0, j) = std::exp(s(0, j) - mx);
      denom += s(0, j);
    }
    for (std::size_t d = 0; d < h; ++d) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j) acc += s(0, j) * qkv(j, 2 * h + d);
      o(i, d) = acc / denom;
    }
  }
  return out;
}

void check_input(const ToyBlockParams& params, const Matrix& x) {
  params.validate();
  if (x.cols() != params.hidden()) {
    throw ShapeError(fmt::format("input has {} columns, block hidden size is {}", x.cols(), params.hidden()));
  }
  if (x.rows() == 0) throw ShapeError("input has no rows");
  if (!x.all_finite()) throw ShapeError("input contains non-finite entries");
}

TrackedMatrix track_input(const Matrix& x, ScratchTracker& tracker) {
  tracker.set_stage("input");
  TrackedMatrix in(tracker, "input", x.rows(), x.cols());
  in.get() = x;
  return in;
}

// A chunked linear stage without preallocation: one output piece per chunk,
// then a concatenation into a fresh buffer.
template <typename Fn>
TrackedMatrix pieces_then_concat(ScratchTracker& tracker, const std::string& label, std::size_t n,
                                 std::size_t cols, std::size_t chunk, Fn&& compute_piece) {
  std::vector<TrackedMatrix> pieces;
  for (std::size_t r0 = 0; r0 < n; r0 += chunk) {
    const std::size_t count = std::min(chunk, n - r0);
    pieces.emplace_back(tracker, label + "_piece", count, cols);
    compute_piece(r0, count, pieces.back().get());
  }
  TrackedMatrix out(tracker, label, n, cols);
  std::size_t r0 = 0;
  for (auto& p : pieces) {
    copy_rows(p.get(), 0, p.get().rows(), out.get(), r0);
    r0 += p.get().rows();
    p.release();
  }
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

ScratchTracker::BufferId ScratchTracker::allocate(std::string label, Bytes bytes) {
  const BufferId id = next_id_++;
  ledger_.push_back({std::move(label), stage_, id, bytes, LedgerOp::kAlloc});
  live_.emplace_back(id, Live{bytes, stage_});
  current_ += bytes;
  peak_ = std::max(peak_, current_);
  return id;
}

void ScratchTracker::release(BufferId id) {
  const auto it = std::find_if(live_.begin(), live_.end(), [id](const auto& e) { return e.first == id; });
  if (it == live_.end()) throw std::logic_error(fmt::format("release of unknown buffer {}", id));
  const auto alloc = std::find_if(ledger_.begin(), ledger_.end(), [id](const LedgerEvent& e) {
    return e.buffer == id && e.op == LedgerOp::kAlloc;
  });
  ledger_.push_back({alloc->label, it->second.stage, id, it->second.bytes, LedgerOp::kFree});
  current_ -= it->second.bytes;
  live_.erase(it);
}

Bytes ScratchTracker::stage_peak(std::string_view stage) const {
  Bytes live = 0;
  Bytes best = 0;
  for (const auto& e : ledger_) {
    if (e.stage != stage) continue;
    if (e.op == LedgerOp::kAlloc) {
      live += e.bytes;
      best = std::max(best, live);
    } else {
      live -= e.bytes;
    }
  }
  return best;
}

bool ScratchTracker::replay_consistent() const {
  std::unordered_map<BufferId, Bytes> live;
  Bytes alloc_total = 0;
  Bytes free_total = 0;
  Bytes running_peak = 0;
  for (const auto& e : ledger_) {
    if (e.op == LedgerOp::kAlloc) {
      if (!live.emplace(e.buffer, e.bytes).second) return false;
      alloc_total += e.bytes;
    } else {
      const auto it = live.find(e.buffer);
      if (it == live.end() || it->second != e.bytes) return false;
      live.erase(it);
      free_total += e.bytes;
    }
    if (free_total > alloc_total) return false;
    running_peak = std::max(running_peak, alloc_total - free_total);
  }
  return alloc_total - free_total == current_ && running_peak == peak_;
}

TrackedMatrix::TrackedMatrix(ScratchTracker& tracker, std::string label, std::size_t rows, std::size_t cols)
    : m_(rows, cols), tracker_(&tracker), id_(tracker.allocate(std::move(label), m_.bytes())), live_(true) {}

TrackedMatrix::TrackedMatrix(TrackedMatrix&& other) noexcept
    : m_(std::move(other.m_)), tracker_(other.tracker_), id_(other.id_), live_(other.live_) {
  other.live_ = false;
}

TrackedMatrix& TrackedMatrix::operator=(TrackedMatrix&& other) noexcept {
  if (this != &other) {
    release();
    m_ = std::move(other.m_);
    tracker_ = other.tracker_;
    id_ = other.id_;
    live_ = other.live_;
    other.live_ = false;
  }
  return *this;
}

TrackedMatrix::~TrackedMatrix() { release(); }

void TrackedMatrix::release() {
  if (live_) {
    tracker_->release(id_);
    live_ = false;
  }
}

Matrix TrackedMatrix::take() && {
  live_ = false;
  return std::move(m_);
}

void ToyBlockParams::validate() const {
  const std::size_t h = w_out.rows();
  const std::size_t i = w_down.rows();
  if (h == 0 || i == 0) throw ShapeError("hidden and intermediate sizes must be >= 1");
  if (w_qkv.rows() != h || w_qkv.cols() != 3 * h) throw ShapeError("w_qkv must be hidden x 3*hidden");
  if (w_out.cols() != h) throw ShapeError("w_out must be hidden x hidden");
  if (w_gate_up.rows() != h || w_gate_up.cols() != 2 * i) {
    throw ShapeError("w_gate_up must be hidden x 2*intermediate");
  }
  if (w_down.cols() != h) throw ShapeError("w_down must be intermediate x hidden");
}

ToyBlockParams ToyBlockParams::random(std::uint64_t seed, std::size_t hidden, std::size_t intermediate) {
  if (hidden == 0 || intermediate == 0) throw ShapeError("hidden and intermediate sizes must be >= 1");
  rng::Stream s(rng::mix(kDomainParams, seed));
  auto fill = [&s](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (auto& v : m.data()) v = s.uniform(-bound, bound);
    return m;
  };
  ToyBlockParams p;
  p.w_qkv = fill(hidden, 3 * hidden);
  p.w_out = fill(hidden, hidden);
  p.w_gate_up = fill(hidden, 2 * intermediate);
  p.w_down = fill(intermediate, hidden);
  return p;
}

ToyBlockParams ToyBlockParams::identity(std::size_t hidden, std::size_t intermediate) {
  if (hidden == 0 || intermediate == 0) throw ShapeError("hidden and intermediate sizes must be >= 1");
  ToyBlockParams p;
  p.w_qkv = Matrix(hidden, 3 * hidden);
  p.w_out = Matrix::identity(hidden);
  p.w_gate_up = Matrix(hidden, 2 * intermediate);
  p.w_down = Matrix(intermediate, hidden);
  const std::size_t k = std::min(hidden, intermediate);
  for (std::size_t d = 0; d < hidden; ++d) {
    for (std::size_t part = 0; part < 3; ++part) p.w_qkv(d, part * hidden + d) = 1.0;
  }
  for (std::size_t d = 0; d < k; ++d) {
    p.w_gate_up(d, d) = 1.0;
    p.w_gate_up(d, intermediate + d) = 1.0;
    p.w_down(d, d) = 1.0;
  }
  return p;
}

Matrix random_input(std::uint64_t seed, std::size_t tokens, std::size_t hidden) {
  rng::Stream s(rng::mix(kDomainInput, seed));
  Matrix m(tokens, hidden);
  for (auto& v : m.data()) v = s.uniform(-1.0, 1.0);
  return m;
}

Matrix block_forward_full(const ToyBlockParams& params, const Matrix& x, ScratchTracker& tracker) {
  check_input(params, x);
  const std::size_t n = x.rows();
  const std::size_t h = params.hidden();
  const std::size_t inter = params.intermediate();
  TrackedMatrix in = track_input(x, tracker);

  tracker.set_stage(std::string(kStageQkv));
  TrackedMatrix qkv(tracker, "qkv", n, 3 * h);
  gemm_rows(in.get(), 0, n, params.w_qkv, qkv.get(), 0);

  tracker.set_stage(std::string(kStageAttention));
  TrackedMatrix attn = attention(qkv.get(), h, tracker);
  qkv.release();

  tracker.set_stage(std::string(kStageOutProj));
  TrackedMatrix h1(tracker, "h1", n, h);
  gemm_rows(attn.get(), 0, n, params.w_out, h1.get(), 0, &in.get(), 0);
  attn.release();
  in.release();

  // Each elementwise op materializes its own result.
  tracker.set_stage(std::string(kStageMlp));
  TrackedMatrix gu(tracker, "gate_up", n, 2 * inter);
  gemm_rows(h1.get(), 0, n, params.w_gate_up, gu.get(), 0);
  TrackedMatrix gate(tracker, "silu_gate", n, inter);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < inter; ++j) gate.get()(r, j) = silu(gu.get()(r, j));
  }
  TrackedMatrix act(tracker, "act", n, inter);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < inter; ++j) act.get()(r, j) = gate.get()(r, j) * gu.get()(r, inter + j);
  }
  gate.release();
  gu.release();
  TrackedMatrix y(tracker, "y", n, h);
  gemm_rows(act.get(), 0, n, params.w_down, y.get(), 0, &h1.get(), 0);
  act.release();
  h1.release();
  return std::move(y).take();
}

Matrix block_forward_hybrid(const ToyBlockParams& params, const Matrix& x, const HybridOptions& opts,
                            ScratchTracker& tracker) {
  if (opts.chunk == 0) throw ShapeError("chunk must be >= 1");
  check_input(params, x);
  const std::size_t n = x.rows();
  if (opts.chunk >= n) return block_forward_full(params, x, tracker);

  const std::size_t h = params.hidden();
  const std::size_t inter = params.intermediate();
  const std::size_t c = opts.chunk;
  const bool prealloc = opts.prealloc;
  const bool inplace = opts.prealloc && opts.inplace;
  TrackedMatrix in = track_input(x, tracker);

  // qkv: n x h -> n x 3h, never in place.
  tracker.set_stage(std::string(kStageQkv));
  TrackedMatrix qkv = [&] {
    if (prealloc) {
      TrackedMatrix out(tracker, "qkv", n, 3 * h);
      for (std::size_t r0 = 0; r0 < n; r0 += c) {
        gemm_rows(in.get(), r0, std::min(c, n - r0), params.w_qkv, out.get(), r0);
      }
      return out;
    }
    return pieces_then_concat(tracker, "qkv", n, 3 * h, c, [&](std::size_t r0, std::size_t count, Matrix& piece) {
      gemm_rows(in.get(), r0, count, params.w_qkv, piece, 0);
    });
  }();

  tracker.set_stage(std::string(kStageAttention));
  TrackedMatrix attn = attention(qkv.get(), h, tracker);
  qkv.release();

  // out_proj with residual: n x h -> n x h.
  tracker.set_stage(std::string(kStageOutProj));
  TrackedMatrix h1 = [&] {
    if (inplace) {
      // A GEMM cannot overwrite its own operand, so each chunk lands in a
      // temporary before being copied back over the consumed attention rows.
      for (std::size_t r0 = 0; r0 < n; r0 += c) {
        const std::size_t count = std::min(c, n - r0);
        TrackedMatrix tmp(tracker, "out_proj_tmp", count, h);
        gemm_rows(attn.get(), r0, count, params.w_out, tmp.get(), 0, &in.get(), r0);
        copy_rows(tmp.get(), 0, count, attn.get(), r0);
      }
      return std::move(attn);
    }
    if (prealloc) {
      TrackedMatrix out(tracker, "h1", n, h);
      for (std::size_t r0 = 0; r0 < n; r0 += c) {
        gemm_rows(attn.get(), r0, std::min(c, n - r0), params.w_out, out.get(), r0, &in.get(), r0);
      }
      return out;
    }
    return pieces_then_concat(tracker, "h1", n, h, c, [&](std::size_t r0, std::size_t count, Matrix& piece) {
      gemm_rows(attn.get(), r0, count, params.w_out, piece, 0, &in.get(), r0);
    });
  }();
  attn.release();
  in.release();

  // The MLP runs as one chunked virtual layer n x h -> n x h.
  tracker.set_stage(std::string(kStageMlp));
  auto mlp_chunk = [&](std::size_t r0, std::size_t count, Matrix& dst, std::size_t dst_r0) {
    TrackedMatrix gu(tracker, "gate_up", count, 2 * inter);
    gemm_rows(h1.get(), r0, count, params.w_gate_up, gu.get(), 0);
    TrackedMatrix act(tracker, "act", count, inter);
    if (prealloc) {
      for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < inter; ++j) act.get()(r, j) = silu(gu.get()(r, j)) * gu.get()(r, inter + j);
      }
    } else {
      TrackedMatrix gate(tracker, "silu_gate", count, inter);
      for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < inter; ++j) gate.get()(r, j) = silu(gu.get()(r, j));
      }
      for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t j = 0; j < inter; ++j) act.get()(r, j) = gate.get()(r, j) * gu.get()(r, inter + j);
      }
    }
    gu.release();
    gemm_rows(act.get(), 0, count, params.w_down, dst, dst_r0, &h1.get(), r0);
  };

  if (inplace) {
    for (std::size_t r0 = 0; r0 < n; r0 += c) mlp_chunk(r0, std::min(c, n - r0), h1.get(), r0);
    return std::move(h1).take();
  }
  TrackedMatrix y = [&] {
    if (prealloc) {
      TrackedMatrix out(tracker, "y", n, h);
      for (std::size_t r0 = 0; r0 < n; r0 += c) mlp_chunk(r0, std::min(c, n - r0), out.get(), r0);
      return out;
    }
    return pieces_then_concat(tracker, "y", n, h, c, [&](std::size_t r0, std::size_t count, Matrix& piece) {
      mlp_chunk(r0, count, piece, 0);
    });
  }();
  h1.release();
  return std::move(y).take();
}

double peak_ratio(const ScratchTracker& full, const ScratchTracker& hybrid) {
  if (full.peak() == 0) throw std::invalid_argument("full tracker recorded no allocations");
  return static_cast<double>(hybrid.peak()) / static_cast<double>(full.peak());
}

double max_relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix shapes differ");
  double worst = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double scale = std::max(std::abs(da[i]), std::abs(db[i]));
    if (scale == 0.0) continue;
    worst = std::max(worst, std::abs(da[i] - db[i]) / scale);
  }
  return worst;
}

double relative_frobenius_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("matrix shapes differ");
  double diff = 0.0;
  double ref = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    diff += (da[i] - db[i]) * (da[i] - db[i]);
    ref += db[i] * db[i];
  }
  if (ref == 0.0) return diff == 0.0 ? 0.0 : INFINITY;
  return std::sqrt(diff / ref);
}

}  // namespace prefillsim::numerics
