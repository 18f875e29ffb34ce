#pragma once

// Dense kernels for the embedding network. Tensors are contiguous row-major
// [batch][channels][length] (conv) or [batch][features] (linear).
//
// `serial` is the reference; `parallel` fans out over OpenMP threads. Each
// output element is produced by the same arithmetic in the same order in both
// variants, so they agree bit for bit at any thread count.

#include <cstddef>

namespace tweak::kernels {

struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t length = 1;  // same-padding: output length == input length
  std::size_t kernel = 1;  // odd
  std::size_t pad() const { return (kernel - 1) / 2; }
};

struct LinearShape {
  std::size_t batch = 1;
  std::size_t in = 1;
  std::size_t out = 1;
};

// Eight-lane fixed-order dot product; vectorizes without reassociation flags.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

enum class Backend { serial, parallel };

#define TWEAK_KERNEL_DECLS                                                                     \
  /* y = conv(x, w) + b; w is [out][in][kernel] */                                            \
  template <class T>                                                                          \
  void conv1d_forward(const ConvShape& s, const T* x, const T* w, const T* b, T* y);          \
  /* dx = conv^T(dy, w); overwrites dx */                                                     \
  template <class T>                                                                          \
  void conv1d_backward_input(const ConvShape& s, const T* dy, const T* w, T* dx);             \
  /* dw, db summed over the batch; overwrites */                                              \
  template <class T>                                                                          \
  void conv1d_backward_weights(const ConvShape& s, const T* x, const T* dy, T* dw, T* db);    \
  /* y = x W^T + b; W is [out][in] */                                                         \
  template <class T>                                                                          \
  void linear_forward(const LinearShape& s, const T* x, const T* w, const T* b, T* y);        \
  template <class T>                                                                          \
  void linear_backward_input(const LinearShape& s, const T* dy, const T* w, T* dx);           \
  template <class T>                                                                          \
  void linear_backward_weights(const LinearShape& s, const T* x, const T* dy, T* dw, T* db);

namespace serial {
TWEAK_KERNEL_DECLS
}
namespace parallel {
TWEAK_KERNEL_DECLS
}

#undef TWEAK_KERNEL_DECLS

// Runtime dispatch used by the network.
template <class T>
void conv1d_forward(Backend be, const ConvShape& s, const T* x, const T* w, const T* b, T* y) {
  be == Backend::serial ? serial::conv1d_forward(s, x, w, b, y)
                        : parallel::conv1d_forward(s, x, w, b, y);
}
template <class T>
void conv1d_backward_input(Backend be, const ConvShape& s, const T* dy, const T* w, T* dx) {
  be == Backend::serial ? serial::conv1d_backward_input(s, dy, w, dx)
                        : parallel::conv1d_backward_input(s, dy, w, dx);
}
template <class T>
void conv1d_backward_weights(Backend be, const ConvShape& s, const T* x, const T* dy, T* dw,
                             T* db) {
  be == Backend::serial ? serial::conv1d_backward_weights(s, x, dy, dw, db)
                        : parallel::conv1d_backward_weights(s, x, dy, dw, db);
}
template <class T>
void linear_forward(Backend be, const LinearShape& s, const T* x, const T* w, const T* b, T* y) {
  be == Backend::serial ? serial::linear_forward(s, x, w, b, y)
                        : parallel::linear_forward(s, x, w, b, y);
}
template <class T>
void linear_backward_input(Backend be, const LinearShape& s, const T* dy, const T* w, T* dx) {
  be == Backend::serial ? serial::linear_backward_input(s, dy, w, dx)
                        : parallel::linear_backward_input(s, dy, w, dx);
}
template <class T>
void linear_backward_weights(Backend be, const LinearShape& s, const T* x, const T* dy, T* dw,
                             T* db) {
  be == Backend::serial ? serial::linear_backward_weights(s, x, dy, dw, db)
                        : parallel::linear_backward_weights(s, x, dy, dw, db);
}

// Worker count for the parallel backend (TWEAK_NUM_THREADS overrides the OpenMP default).
int worker_count();
void set_worker_count(int n);

}  // namespace tweak::kernels
