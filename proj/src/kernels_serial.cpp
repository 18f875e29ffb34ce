#include "kernels_impl.hpp"

namespace tweak::kernels::serial {

template <class T>
void conv1d_forward(const ConvShape& s, const T* x, const T* w, const T* b, T* y) {
  for (std::size_t i = 0; i < s.batch; ++i) detail::conv_forward_item(s, i, x, w, b, y);
}

template <class T>
void conv1d_backward_input(const ConvShape& s, const T* dy, const T* w, T* dx) {
  for (std::size_t i = 0; i < s.batch; ++i) detail::conv_backward_input_item(s, i, dy, w, dx);
}

template <class T>
void conv1d_backward_weights(const ConvShape& s, const T* x, const T* dy, T* dw, T* db) {
  for (std::size_t co = 0; co < s.out_channels; ++co)
    detail::conv_backward_weights_channel(s, co, x, dy, dw, db);
}

template <class T>
void linear_forward(const LinearShape& s, const T* x, const T* w, const T* b, T* y) {
  for (std::size_t i = 0; i < s.batch; ++i) detail::linear_forward_item(s, i, x, w, b, y);
}

template <class T>
void linear_backward_input(const LinearShape& s, const T* dy, const T* w, T* dx) {
  for (std::size_t i = 0; i < s.batch; ++i) detail::linear_backward_input_item(s, i, dy, w, dx);
}

template <class T>
void linear_backward_weights(const LinearShape& s, const T* x, const T* dy, T* dw, T* db) {
  for (std::size_t o = 0; o < s.out; ++o) detail::linear_backward_weights_row(s, o, x, dy, dw, db);
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

}  // namespace tweak::kernels::serial
