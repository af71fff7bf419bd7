#pragma once

// A toy decoder block on dense float64 matrices, used to check two claims
// about hybrid prefilling on real arithmetic:
//
//  * running the linear stages chunk-by-chunk while attention runs over the
//    whole sequence leaves the output unchanged, and
//  * output preallocation and in-place reuse shrink the peak scratch held by
//    those stages.
//
// Block structure (single head, residual connections, no norms):
//
//   qkv = x W_qkv                  n x h  -> n x 3h
//   a   = causal_attention(qkv)    n x 3h -> n x h
//   h1  = x + a W_out              n x h  -> n x h
//   y   = h1 + (silu(g) * u) W_down  where [g u] = h1 W_gate_up
//
// Every buffer goes through a ScratchTracker that keeps an allocation ledger.
// The input is copied into a tracked buffer first; the returned output stays
// live in the ledger. Attention scores are held one query row at a time.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prefillsim::numerics {

using Bytes = std::uint64_t;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  Bytes bytes() const noexcept { return static_cast<Bytes>(data_.size()) * sizeof(double); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class LedgerOp { kAlloc, kFree };

struct LedgerEvent {
  std::string label;
  std::string stage;
  std::uint64_t buffer;
  Bytes bytes;
  LedgerOp op;
};

class ScratchTracker {
 public:
  using BufferId = std::uint64_t;

  BufferId allocate(std::string label, Bytes bytes);
  void release(BufferId id);

  // Subsequent allocations are attributed to `stage`.
  void set_stage(std::string stage) { stage_ = std::move(stage); }

  Bytes current() const noexcept { return current_; }
  Bytes peak() const noexcept { return peak_; }
  const std::vector<LedgerEvent>& ledger() const noexcept { return ledger_; }

  // Highest simultaneous footprint of buffers allocated while `stage` was active.
  Bytes stage_peak(std::string_view stage) const;

  // Replays the ledger: every free matches a live allocation, allocations
  // minus frees equal current(), and the running maximum equals peak().
  bool replay_consistent() const;

 private:
  struct Live {
    Bytes bytes;
    std::string stage;
  };
  std::vector<LedgerEvent> ledger_;
  std::vector<std::pair<BufferId, Live>> live_;
  std::string stage_;
  BufferId next_id_ = 1;
  Bytes current_ = 0;
  Bytes peak_ = 0;
};

// Matrix whose storage is registered with a tracker for its lifetime.
class TrackedMatrix {
 public:
  TrackedMatrix(ScratchTracker& tracker, std::string label, std::size_t rows, std::size_t cols);
  TrackedMatrix(TrackedMatrix&& other) noexcept;
  TrackedMatrix& operator=(TrackedMatrix&& other) noexcept;
  TrackedMatrix(const TrackedMatrix&) = delete;
  TrackedMatrix& operator=(const TrackedMatrix&) = delete;
  ~TrackedMatrix();

  Matrix& get() noexcept { return m_; }
  const Matrix& get() const noexcept { return m_; }

  // Returns the ledger entry now rather than at scope exit.
  void release();

  // Hands the data to the caller; the allocation stays live in the ledger.
  Matrix take() &&;

 private:
  Matrix m_;
  ScratchTracker* tracker_;
  ScratchTracker::BufferId id_;
  bool live_;
};

struct ToyBlockParams {
  Matrix w_qkv;      // h x 3h
  Matrix w_out;      // h x h
  Matrix w_gate_up;  // h x 2I
  Matrix w_down;     // I x h

  std::size_t hidden() const noexcept { return w_out.rows(); }
  std::size_t intermediate() const noexcept { return w_down.rows(); }

  // Throws ShapeError unless the shapes compose.
  void validate() const;

  // Weights drawn uniformly from [-1, 1] / sqrt(fan_in).
  static ToyBlockParams random(std::uint64_t seed, std::size_t hidden, std::size_t intermediate);
  // Identity-like weights: each projection copies leading columns.
  static ToyBlockParams identity(std::size_t hidden, std::size_t intermediate);
};

// Entries uniform in [-1, 1].
Matrix random_input(std::uint64_t seed, std::size_t tokens, std::size_t hidden);

struct HybridOptions {
  std::size_t chunk = 1;
  // Allocate each stage's output once and write chunk results into it,
  // instead of concatenating per-chunk outputs. Elementwise MLP ops also
  // write into their destination; without prealloc each materializes its
  // own result, as the full path does.
  bool prealloc = true;
  // With prealloc, stages whose output shape equals their input shape
  // overwrite the input buffer. No effect without prealloc.
  bool inplace = true;
};

Matrix block_forward_full(const ToyBlockParams& params, const Matrix& x, ScratchTracker& tracker);

Matrix block_forward_hybrid(const ToyBlockParams& params, const Matrix& x, const HybridOptions& opts,
                            ScratchTracker& tracker);

// hybrid.peak() / full.peak(). Throws std::invalid_argument if full.peak() == 0.
double peak_ratio(const ScratchTracker& full, const ScratchTracker& hybrid);

// max_ij |a - b| / max(|a|, |b|), 0 where both are 0.
double max_relative_error(const Matrix& a, const Matrix& b);
// ||a - b||_F / ||b||_F.
double relative_frobenius_error(const Matrix& a, const Matrix& b);

// Stage labels used in the ledger.
inline constexpr std::string_view kStageQkv = "qkv";
inline constexpr std::string_view kStageAttention = "attention";
inline constexpr std::string_view kStageOutProj = "out_proj";
inline constexpr std::string_view kStageMlp = "mlp";

}  // namespace prefillsim::numerics
