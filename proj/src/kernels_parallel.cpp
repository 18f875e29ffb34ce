#include <cstdlib>
#include <string>

#include <omp.h>

#include "kernels_impl.hpp"
#include "tweak/common.hpp"

namespace tweak::kernels {

namespace {
int g_workers = 0;  // 0: not yet resolved
}

int worker_count() {
  if (g_workers > 0) return g_workers;
  if (const char* env = std::getenv("TWEAK_NUM_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return g_workers = n;
    } catch (const std::exception&) {
    }
    throw Error(std::string("TWEAK_NUM_THREADS must be a positive integer, got '") + env + "'");
  }
  return g_workers = omp_get_max_threads();
}

void set_worker_count(int n) {
  if (n < 1) throw Error("worker count must be positive");
  g_workers = n;
}

}  // namespace tweak::kernels

namespace tweak::kernels::parallel {

namespace {
using idx = std::ptrdiff_t;
}

template <class T>
void conv1d_forward(const ConvShape& s, const T* x, const T* w, const T* b, T* y) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (idx i = 0; i < static_cast<idx>(s.batch); ++i) detail::conv_forward_item(s, i, x, w, b, y);
}

template <class T>
void conv1d_backward_input(const ConvShape& s, const T* dy, const T* w, T* dx) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (idx i = 0; i < static_cast<idx>(s.batch); ++i)
    detail::conv_backward_input_item(s, i, dy, w, dx);
}

template <class T>
void conv1d_backward_weights(const ConvShape& s, const T* x, const T* dy, T* dw, T* db) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (idx co = 0; co < static_cast<idx>(s.out_channels); ++co)
    detail::conv_backward_weights_channel(s, co, x, dy, dw, db);
}

template <class T>
void linear_forward(const LinearShape& s, const T* x, const T* w, const T* b, T* y) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (idx i = 0; i < static_cast<idx>(s.batch); ++i) detail::linear_forward_item(s, i, x, w, b, y);
}

template <class T>
void linear_backward_input(const LinearShape& s, const T* dy, const T* w, T* dx) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (idx i = 0; i < static_cast<idx>(s.batch); ++i)
    detail::linear_backward_input_item(s, i, dy, w, dx);
}

template <class T>
void linear_backward_weights(const LinearShape& s, const T* x, const T* dy, T* dw, T* db) {
#pragma omp parallel for schedule(static) num_threads(worker_count())
  for (idx o = 0; o < static_cast<idx>(s.out); ++o)
    detail::linear_backward_weights_row(s, o, x, dy, dw, db);
}

#define INSTANTIATE(T)                                                                        \
  template void conv1d_forward<T>(const ConvShape&, const T*, const T*, const T*, T*);       \
  template void conv1d_backward_input<T>(const ConvShape&, const T*, const T*, T*);          \
  template void conv1d_backward_weights<T>(const ConvShape&, const T*, const T*, T*, T*);    \
  template void linear_forward<T>(const LinearShape&, const T*, const T*, const T*, T*);     \
  template void linear_backward_input<T>(const LinearShape&, const T*, const T*, T*);        \
  template void linear_backward_weights<T>(const LinearShape&, const T*, const T*, T*, T*);

INSTANTIATE(float)
INSTANTIATE(double)
#undef INSTANTIATE

}  // namespace tweak::kernels::parallel
