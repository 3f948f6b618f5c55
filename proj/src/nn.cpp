#include "hvpr/nn.hpp"

namespace hvpr::nn {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool with_bias) {
  Linear l;
  l.weight = store.glorot(name + ".weight", Shape{in, out}, in, out, rng);
  if (with_bias) l.bias = store.constant(name + ".bias", Shape{out}, 0.0);
  return l;
}

BatchNorm BatchNorm::create(ParameterStore& store, const std::string& name, std::size_t channels) {
  BatchNorm bn;
  bn.gamma = store.constant(name + ".gamma", Shape{channels}, 1.0);
  bn.beta = store.constant(name + ".beta", Shape{channels}, 0.0);
  bn.running_mean = store.buffer(name + ".running_mean", Shape{channels}, 0.0);
  bn.running_var = store.buffer(name + ".running_var", Shape{channels}, 1.0);
  return bn;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng, bool with_bias) {
  Conv2d c;
  c.weight = store.glorot(name + ".weight", Shape{out, in, kernel, kernel}, in * kernel * kernel,
                          out * kernel * kernel, rng);
  if (with_bias) c.bias = store.constant(name + ".bias", Shape{out}, 0.0);
  c.stride = stride;
  c.pad = pad;
  return c;
}

ConvTranspose2d ConvTranspose2d::create(ParameterStore& store, const std::string& name, std::size_t in,
                                        std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng,
                                        bool with_bias) {
  ConvTranspose2d c;
  c.weight = store.glorot(name + ".weight", Shape{in, out, kernel, kernel}, out * kernel * kernel,
                          in * kernel * kernel, rng);
  if (with_bias) c.bias = store.constant(name + ".bias", Shape{out}, 0.0);
  c.stride = stride;
  return c;
}

}  // namespace hvpr::nn
