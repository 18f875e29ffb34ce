#pragma once

// Per-item building blocks shared by the serial and parallel kernels.

#include <algorithm>
#include <cstring>

#include "tweak/kernels.hpp"

namespace tweak::kernels::detail {

// Valid output range [t0, t1) for tap k, and the input offset of that tap.
inline void tap_range(const ConvShape& s, std::size_t k, std::size_t& t0, std::size_t& t1,
                      std::ptrdiff_t& off) {
  off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(s.pad());
  const auto L = static_cast<std::ptrdiff_t>(s.length);
  t0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -off));
  t1 = static_cast<std::size_t>(std::min<std::ptrdiff_t>(L, L - off));
  if (t1 < t0) t1 = t0;
}

template <class T>
void conv_forward_item(const ConvShape& s, std::size_t b, const T* x, const T* w, const T* bias,
                       T* y) {
  const std::size_t L = s.length;
  const T* xb = x + b * s.in_channels * L;
  T* yb = y + b * s.out_channels * L;
  for (std::size_t co = 0; co < s.out_channels; ++co) {
    T* yc = yb + co * L;
    std::fill(yc, yc + L, bias ? bias[co] : T(0));
    for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
      const T* xc = xb + ci * L;
      const T* wk = w + (co * s.in_channels + ci) * s.kernel;
      for (std::size_t k = 0; k < s.kernel; ++k) {
        std::size_t t0, t1;
        std::ptrdiff_t off;
        tap_range(s, k, t0, t1, off);
        axpy(wk[k], xc + static_cast<std::ptrdiff_t>(t0) + off, yc + t0, t1 - t0);
      }
    }
  }
}

template <class T>
void conv_backward_input_item(const ConvShape& s, std::size_t b, const T* dy, const T* w, T* dx) {
  const std::size_t L = s.length;
  const T* dyb = dy + b * s.out_channels * L;
  T* dxb = dx + b * s.in_channels * L;
  std::fill(dxb, dxb + s.in_channels * L, T(0));
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    T* dxc = dxb + ci * L;
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const T* dyc = dyb + co * L;
      const T* wk = w + (co * s.in_channels + ci) * s.kernel;
      for (std::size_t k = 0; k < s.kernel; ++k) {
        std::size_t t0, t1;
        std::ptrdiff_t off;
        tap_range(s, k, t0, t1, off);
        axpy(wk[k], dyc + t0, dxc + static_cast<std::ptrdiff_t>(t0) + off, t1 - t0);
      }
    }
  }
}

template <class T>
void conv_backward_weights_channel(const ConvShape& s, std::size_t co, const T* x, const T* dy,
                                   T* dw, T* db) {
  const std::size_t L = s.length;
  const std::size_t in_stride = s.in_channels * L;
  const std::size_t out_stride = s.out_channels * L;
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    T* wk = dw + (co * s.in_channels + ci) * s.kernel;
    for (std::size_t k = 0; k < s.kernel; ++k) {
      std::size_t t0, t1;
      std::ptrdiff_t off;
      tap_range(s, k, t0, t1, off);
      T acc = 0;
      for (std::size_t b = 0; b < s.batch; ++b)
        acc += dot(dy + b * out_stride + co * L + t0,
                   x + b * in_stride + ci * L + static_cast<std::ptrdiff_t>(t0) + off, t1 - t0);
      wk[k] = acc;
    }
  }
  if (db) {
    T acc = 0;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const T* d = dy + b * out_stride + co * L;
      T part = 0;
      for (std::size_t t = 0; t < L; ++t) part += d[t];
      acc += part;
    }
    db[co] = acc;
  }
}

template <class T>
void linear_forward_item(const LinearShape& s, std::size_t b, const T* x, const T* w,
                         const T* bias, T* y) {
  const T* xb = x + b * s.in;
  T* yb = y + b * s.out;
  for (std::size_t o = 0; o < s.out; ++o)
    yb[o] = (bias ? bias[o] : T(0)) + dot(w + o * s.in, xb, s.in);
}

template <class T>
void linear_backward_input_item(const LinearShape& s, std::size_t b, const T* dy, const T* w,
                                T* dx) {
  const T* dyb = dy + b * s.out;
  T* dxb = dx + b * s.in;
  std::fill(dxb, dxb + s.in, T(0));
  for (std::size_t o = 0; o < s.out; ++o) axpy(dyb[o], w + o * s.in, dxb, s.in);
}

template <class T>
void linear_backward_weights_row(const LinearShape& s, std::size_t o, const T* x, const T* dy,
                                 T* dw, T* db) {
  T* row = dw + o * s.in;
  std::fill(row, row + s.in, T(0));
  T acc = 0;
  for (std::size_t b = 0; b < s.batch; ++b) {
    const T g = dy[b * s.out + o];
    axpy(g, x + b * s.in, row, s.in);
    acc += g;
  }
  if (db) db[o] = acc;
}

}  // namespace tweak::kernels::detail
