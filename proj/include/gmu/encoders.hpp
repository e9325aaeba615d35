#ifndef GMU_ENCODERS_HPP
#define GMU_ENCODERS_HPP

#include <string>
#include <vector>

#include "gmu/autodiff.hpp"
#include "gmu/common.hpp"
#include "gmu/params.hpp"

namespace gmu {

/// Registers one full encoder (token embedding, bidirectional LSTM, output
/// projection, visual base affine + position table) under `prefix`.
/// Hidden size d_e equals d. Embeddings and projections are uniform
/// (-1/sqrt(fan_in), 1/sqrt(fan_in)); recurrent matrices are orthogonal per
/// gate block.
inline void register_encoder_params(ParamStore& store, const std::string& prefix, int vocab_size,
                                    int d, int d_i, int T, Rng& rng) {
  const int H = d;  // d_e = d
  store.create(prefix + "embed", uniform_init(vocab_size, H, H, rng));
  for (const char* dir : {"fw", "bw"}) {
    store.create(prefix + "lstm_" + dir + "_w", uniform_init(H, 4 * H, H, rng));
    Mat u(H, 4 * H);
    for (int gate = 0; gate < 4; ++gate) u.middleCols(gate * H, H) = orthogonal_init(H, rng);
    store.create(prefix + "lstm_" + dir + "_u", std::move(u));
    store.create(prefix + "lstm_" + dir + "_b", Mat::Zero(1, 4 * H));
  }
  store.create(prefix + "proj_w", uniform_init(2 * H, d, 2 * H, rng));
  store.create(prefix + "proj_b", Mat::Zero(1, d));
  store.create(prefix + "w_base", uniform_init(d_i, d, d_i, rng));
  store.create(prefix + "w_pos", uniform_init(T, d, d, rng));
}

namespace detail {

/// One LSTM direction over the token list; returns the final hidden state (1 x H).
inline ad::Var run_lstm(ad::Tape& t, ad::Var embed, ad::Var w, ad::Var u, ad::Var b,
                        const std::vector<int>& tokens) {
  const int H = static_cast<int>(t.value(u).rows());
  ad::Var h = t.constant(Mat::Zero(1, H));
  ad::Var c = t.constant(Mat::Zero(1, H));
  for (int tok : tokens) {
    ad::Var x = t.rows_gather(embed, {tok});
    ad::Var gates = t.add(t.add(t.matmul(x, w), t.matmul(h, u)), b);
    ad::Var gi = t.sigmoid(t.slice_cols(gates, 0, H));
    ad::Var gf = t.sigmoid(t.slice_cols(gates, H, H));
    ad::Var gg = t.tanh_(t.slice_cols(gates, 2 * H, H));
    ad::Var go = t.sigmoid(t.slice_cols(gates, 3 * H, H));
    c = t.add(t.mul(gf, c), t.mul(gi, gg));
    h = t.mul(go, t.tanh_(c));
  }
  return h;
}

}  // namespace detail

/// Sentence feature s (1 x d): final hidden states of both LSTM directions,
/// concatenated and projected. PAD never enters: callers pass the true token
/// list, not a padded buffer.
inline ad::Var encode_query_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                 const std::vector<int>& tokens) {
  if (tokens.empty()) throw DataError("encode_query: empty token list");
  const long vocab_rows = t.value(P[prefix + "embed"]).rows();
  for (int tok : tokens)
    if (tok < 0 || tok >= vocab_rows)
      throw DataError("encode_query: token id " + std::to_string(tok) + " out of range");
  ad::Var h_fw = detail::run_lstm(t, P[prefix + "embed"], P[prefix + "lstm_fw_w"],
                                  P[prefix + "lstm_fw_u"], P[prefix + "lstm_fw_b"], tokens);
  std::vector<int> rev(tokens.rbegin(), tokens.rend());
  ad::Var h_bw = detail::run_lstm(t, P[prefix + "embed"], P[prefix + "lstm_bw_w"],
                                  P[prefix + "lstm_bw_u"], P[prefix + "lstm_bw_b"], rev);
  return t.add(t.matmul(t.concat_cols({h_fw, h_bw}), P[prefix + "proj_w"]), P[prefix + "proj_b"]);
}

/// Visual base features: ReLU(V_o * W_base + W_pos), stacked over B samples
/// ((B*T) x d_i in, (B*T) x d out).
inline ad::Var encode_visual_tape(ad::Tape& t, TapeParams& P, const std::string& prefix,
                                  ad::Var v_o, int B) {
  ad::Var w_base = P[prefix + "w_base"];
  ad::Var w_pos = P[prefix + "w_pos"];
  if (t.value(v_o).cols() != t.value(w_base).rows())
    throw DataError("encode_visual: feature dim " + std::to_string(t.value(v_o).cols()) +
                    " does not match W_base rows " + std::to_string(t.value(w_base).rows()));
  if (t.value(v_o).rows() != t.value(w_pos).rows() * B)
    throw DataError("encode_visual: row count does not match B*T");
  return t.relu(t.add_tiled_rows(t.matmul(v_o, w_base), w_pos, B));
}

// ---------------------------------------------------------------------------
// Value-level wrappers (unit-test surface; the model builds on the tape forms)

inline Vec encode_query(const std::vector<int>& tokens, const ParamStore& store,
                        const std::string& prefix = "enc_") {
  ad::Tape t;
  TapeParams P(t, store);
  const ad::Var s = encode_query_tape(t, P, prefix, tokens);
  return t.value(s).row(0).transpose();
}

inline Mat encode_visual(const Mat& v_o, const ParamStore& store,
                         const std::string& prefix = "enc_") {
  ad::Tape t;
  TapeParams P(t, store);
  return t.value(encode_visual_tape(t, P, prefix, t.constant(v_o), 1));
}

}  // namespace gmu

#endif  // GMU_ENCODERS_HPP
