#include "qspike/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qspike::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline void gemm_nn_rows(std::size_t r0, std::size_t r1, std::size_t k, std::size_t n,
                         const double* a, const double* b, double* c) {
  for (std::size_t i = r0; i < r1; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

inline void gemm_nt_rows(std::size_t r0, std::size_t r1, std::size_t k, std::size_t n,
                         const double* a, const double* b, double* c) {
  for (std::size_t i = r0; i < r1; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] = s;
    }
  }
}

// Output rows [m0, m1) of A^T B.
inline void gemm_tn_rows(std::size_t m0, std::size_t m1, std::size_t r, std::size_t m, std::size_t n,
                         const double* a, const double* b, double* c) {
  for (std::size_t i = m0; i < m1; ++i) std::fill(c + i * n, c + (i + 1) * n, 0.0);
  for (std::size_t q = 0; q < r; ++q) {
    const double* aq = a + q * m;
    const double* bq = b + q * n;
    for (std::size_t i = m0; i < m1; ++i) {
      const double aqi = aq[i];
      if (aqi == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aqi * bq[j];
    }
  }
}

template <typename T, typename Acc>
inline std::uint64_t accumulate_row(const std::uint8_t* spikes, const SpikeSynapses<T>& syn, Acc* acc) {
  std::uint64_t ops = 0;
  for (std::size_t j = 0; j < syn.in_dim; ++j) {
    if (!spikes[j]) continue;
    const std::uint32_t end = syn.offsets[j + 1];
    for (std::uint32_t e = syn.offsets[j]; e < end; ++e) acc[syn.targets[e]] += syn.weights[e];
    ops += end - syn.offsets[j];
  }
  return ops;
}

template <typename T, typename Acc>
std::uint64_t accumulate_serial(std::size_t rows, const std::uint8_t* spikes, const SpikeSynapses<T>& syn,
                                Acc* acc) {
  std::uint64_t ops = 0;
  for (std::size_t r = 0; r < rows; ++r)
    ops += accumulate_row(spikes + r * syn.in_dim, syn, acc + r * syn.out_dim);
  return ops;
}

template <typename T, typename Acc>
std::uint64_t accumulate_parallel(std::size_t rows, const std::uint8_t* spikes, const SpikeSynapses<T>& syn,
                                  Acc* acc) {
  if (rows * syn.nonzeros() < kParallelWork) return accumulate_serial(rows, spikes, syn, acc);
  std::uint64_t ops = 0;
  const auto n = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) reduction(+ : ops)
  for (long long r = 0; r < n; ++r) {
    const auto rr = static_cast<std::size_t>(r);
    ops += accumulate_row(spikes + rr * syn.in_dim, syn, acc + rr * syn.out_dim);
  }
  return ops;
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  gemm_nn_rows(0, m, k, n, a, b, c);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  gemm_nt_rows(0, m, k, n, a, b, c);
}

void gemm_tn(std::size_t r, std::size_t m, std::size_t n, const double* a, const double* b, double* c) {
  gemm_tn_rows(0, m, r, m, n, a, b, c);
}

std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes,
                                const SpikeSynapses<std::int8_t>& syn, std::int32_t* acc) {
  return accumulate_serial(rows, spikes, syn, acc);
}

std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes, const SpikeSynapses<double>& syn,
                                double* acc) {
  return accumulate_serial(rows, spikes, syn, acc);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  if (m * k * n < kParallelWork) return gemm_nn_rows(0, m, k, n, a, b, c);
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    gemm_nn_rows(ii, ii + 1, k, n, a, b, c);
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  if (m * k * n < kParallelWork) return gemm_nt_rows(0, m, k, n, a, b, c);
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < rows; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    gemm_nt_rows(ii, ii + 1, k, n, a, b, c);
  }
}

void gemm_tn(std::size_t r, std::size_t m, std::size_t n, const double* a, const double* b, double* c) {
  if (r * m * n < kParallelWork) return gemm_tn_rows(0, m, r, m, n, a, b, c);
#pragma omp parallel
  {
#ifdef _OPENMP
    const auto nt = static_cast<std::size_t>(omp_get_num_threads());
    const auto id = static_cast<std::size_t>(omp_get_thread_num());
#else
    const std::size_t nt = 1, id = 0;
#endif
    const std::size_t chunk = (m + nt - 1) / nt;
    const std::size_t m0 = std::min(m, id * chunk);
    const std::size_t m1 = std::min(m, m0 + chunk);
    if (m0 < m1) gemm_tn_rows(m0, m1, r, m, n, a, b, c);
  }
}

std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes,
                                const SpikeSynapses<std::int8_t>& syn, std::int32_t* acc) {
  return accumulate_parallel(rows, spikes, syn, acc);
}

std::uint64_t accumulate_spikes(std::size_t rows, const std::uint8_t* spikes, const SpikeSynapses<double>& syn,
                                double* acc) {
  return accumulate_parallel(rows, spikes, syn, acc);
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace qspike::kernels
