#pragma once

// Spec-level operation surface over the tape primitives.

#include <span>
#include <vector>

#include "rdwn/tape.hpp"

namespace rdwn {

enum class EwKind { kLeakyRelu, kRelu, kAdd, kSub, kMul, kSquare, kScale };
enum class ReduceKind { kSum, kMean, kL2NormPerBatch };

/// Cross-correlation with per-output-channel bias.
inline Tensor op_conv2d(Tape& tape, const Tensor& input, const Tensor& kernel,
                        const Tensor& bias, int stride, int padding) {
  Tensor y = tape.conv_fwd(input, kernel, stride, padding);
  return tape.add(y, tape.bias_broadcast(bias, y.shape()));
}

inline Tensor op_conv2d(Tape& tape, const Tensor& input, const Tensor& kernel,
                        int stride, int padding) {
  return tape.conv_fwd(input, kernel, stride, padding);
}

inline Tensor op_elementwise(Tape& tape, EwKind kind, const Tensor& a,
                             double param = 0.0) {
  switch (kind) {
    case EwKind::kLeakyRelu:
      return tape.leaky_relu(a, param);
    case EwKind::kRelu:
      return tape.leaky_relu(a, 0.0);
    case EwKind::kSquare:
      return tape.square(a);
    case EwKind::kScale:
      return tape.scale(a, param);
    default:
      throw Error("op_elementwise: kind requires two operands");
  }
}

inline Tensor op_elementwise(Tape& tape, EwKind kind, const Tensor& a,
                             const Tensor& b) {
  switch (kind) {
    case EwKind::kAdd:
      return tape.add(a, b);
    case EwKind::kSub:
      return tape.sub(a, b);
    case EwKind::kMul:
      return tape.mul(a, b);
    default:
      throw Error("op_elementwise: kind takes a single operand");
  }
}

inline Tensor op_reduce(Tape& tape, ReduceKind kind, const Tensor& x) {
  switch (kind) {
    case ReduceKind::kSum:
      return tape.sum(x);
    case ReduceKind::kMean:
      return tape.mean(x);
    case ReduceKind::kL2NormPerBatch:
      return tape.sqrt(tape.sum_per_batch(tape.square(x)));
  }
  throw Error("op_reduce: unhandled kind");
}

inline Tensor op_upsample(Tape& tape, const Tensor& x, int factor,
                          UpsampleMode mode) {
  return tape.upsample(x, factor, mode);
}

inline std::vector<Tensor> backward(const Tensor& output,
                                    std::span<const Tensor> wrt,
                                    bool create_graph = false) {
  if (!output.attached()) throw Error("backward: output not attached to a tape");
  return output.tape()->backward(output, wrt, create_graph);
}

}  // namespace rdwn
