#pragma once

// Tape builders for the generator and discriminator. Each builder is generic
// over parameter constness: mutable parameters become gradient-bound leaves,
// const parameters become read-only aliases.

#include <span>
#include <vector>

#include "gca/model.hpp"
#include "gca/tape.hpp"

namespace gca::graph {

inline Var leaf(Tape& t, Parameter& p) { return t.parameter(p); }
inline Var leaf(Tape& t, const Parameter& p) { return t.alias(p.value); }

// Steps one LSTM over input vectors, carrying (h, c) from zero.
template <class Lstm>
class LstmRunner {
 public:
  LstmRunner(Tape& tape, Lstm& params)
      : wi_(leaf(tape, params.w_input)),
        wf_(leaf(tape, params.w_forget)),
        wo_(leaf(tape, params.w_output)),
        wc_(leaf(tape, params.w_cell)),
        bi_(leaf(tape, params.b_input)),
        bf_(leaf(tape, params.b_forget)),
        bo_(leaf(tape, params.b_output)),
        bc_(leaf(tape, params.b_cell)) {
    const std::size_t n = params.hidden();
    h_ = tape.constant(Tensor({n}));
    c_ = tape.constant(Tensor({n}));
  }

  Var step(Var x) {
    const Var z = concat({x, h_});
    const Var i = activation(Activation::sigmoid, affine(wi_, z, bi_));
    const Var f = activation(Activation::sigmoid, affine(wf_, z, bf_));
    const Var o = activation(Activation::sigmoid, affine(wo_, z, bo_));
    const Var g = activation(Activation::tanh, affine(wc_, z, bc_));
    c_ = add(mul(f, c_), mul(i, g));
    h_ = mul(o, activation(Activation::tanh, c_));
    return h_;
  }

  Var hidden() const { return h_; }

 private:
  Var wi_, wf_, wo_, wc_, bi_, bf_, bo_, bc_;
  Var h_, c_;
};

// Hidden state after each token (embedding lookups feed the LSTM).
template <class Lstm>
std::vector<Var> encode_states(Tape& tape, Var embedding, Lstm& params, std::span<const TokenId> tokens) {
  LstmRunner<Lstm> run(tape, params);
  std::vector<Var> states;
  states.reserve(tokens.size());
  for (TokenId t : tokens) states.push_back(run.step(column(embedding, t)));
  return states;
}

// Final hidden state; the zero vector for an empty sequence.
template <class Lstm>
Var encode(Tape& tape, Var embedding, Lstm& params, std::span<const TokenId> tokens) {
  LstmRunner<Lstm> run(tape, params);
  for (TokenId t : tokens) run.step(column(embedding, t));
  return run.hidden();
}

// p = softmax(W2 relu(W1 [e_c e_a] + b1) + b2)
template <class Gen>
Var generator_head(Tape& tape, Gen& gen, Var e_c, Var e_a) {
  const Var hidden = activation(Activation::relu, affine(leaf(tape, gen.w1), concat({e_c, e_a}), leaf(tape, gen.b1)));
  return activation(Activation::softmax, affine(leaf(tape, gen.w2), hidden, leaf(tape, gen.b2)));
}

// l = sigmoid(Wd [current e_cd e_ad] + bd), a length-1 vector.
template <class Disc>
Var discriminator_head(Tape& tape, Disc& disc, Var current, Var e_cd, Var e_ad) {
  return activation(Activation::sigmoid,
                    affine(leaf(tape, disc.wd), concat({current, e_cd, e_ad}), leaf(tape, disc.bd)));
}

}  // namespace gca::graph
