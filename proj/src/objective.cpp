#include "cvsa/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace cvsa {

namespace {

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double norm_of(const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return std::sqrt(s);
}

// D(p, h) with h already gradient-stopped by the caller.
NodeId neg_cosine(GradientTape& tape, NodeId p, NodeId h) {
  NodeId num = dot(tape, p, h);
  NodeId np = sqrt_elem(tape, dot(tape, p, p));
  NodeId nh = sqrt_elem(tape, dot(tape, h, h));
  return scale(tape, divide(tape, num, mul(tape, np, nh)), -1.0);
}

}  // namespace

NodeId cross_view_attention(GradientTape& tape, NodeId pred_q, NodeId h_k) {
  const Tensor& q = tape.value(pred_q);
  const Tensor& k = tape.value(h_k);
  expect(q.rank() == 3 && k.rank() == 3 && q.shape() == k.shape(),
         "cross_view_attention: shape mismatch " + shape_str(q.shape()) + " vs " +
             shape_str(k.shape()));
  const std::size_t pixels = q.dim(0) * q.dim(1);
  const std::size_t d = q.dim(2);
  NodeId q_flat = reshape(tape, pred_q, {pixels, d});
  NodeId k_flat = stop_gradient(tape, reshape(tape, h_k, {pixels, d}));
  return matmul_nt(tape, q_flat, k_flat);
}

NodeId correspondence_intensity(GradientTape& tape, NodeId attention, std::size_t h,
                                std::size_t w) {
  const Tensor& a = tape.value(attention);
  expect(a.rank() == 2 && a.dim(0) == a.dim(1),
         "correspondence_intensity: attention must be square, got " + shape_str(a.shape()));
  expect(a.dim(0) == h * w, "correspondence_intensity: attention size " +
                                std::to_string(a.dim(0)) + " does not match " +
                                std::to_string(h) + "x" + std::to_string(w));
  RowMax m = reduce_max_rows(tape, sigmoid(tape, attention));
  return reshape(tape, m.values, {h, w});
}

NodeId alignment_loss(GradientTape& tape, const BinaryMask& m_q, const BinaryMask& m_k,
                      NodeId c_qk, NodeId c_kq) {
  const Tensor& cq = tape.value(c_qk);
  const Tensor& ck = tape.value(c_kq);
  expect(cq.rank() == 2 && ck.rank() == 2 && cq.shape() == ck.shape(),
         "alignment_loss: intensity maps disagree, " + shape_str(cq.shape()) + " vs " +
             shape_str(ck.shape()));
  const std::size_t hl = cq.dim(0), wl = cq.dim(1);
  expect(m_q.height >= hl && m_q.width >= wl,
         "alignment_loss: mask resolution below the stage resolution");
  auto term = [&tape, hl, wl](const BinaryMask& mask, NodeId c) {
    NodeId m = tape.constant(mask_to_tensor(mask));
    NodeId down = bilinear_resize(tape, m, hl, wl);
    NodeId diff = sub(tape, down, c);
    return mean_all(tape, mul(tape, diff, diff));
  };
  return add(tape, term(m_q, c_qk), term(m_k, c_kq));
}

NodeId contrastive_loss(GradientTape& tape, NodeId p_q, NodeId p_k, NodeId h_q, NodeId h_k) {
  for (NodeId v : {p_q, p_k, h_q, h_k}) {
    if (norm_of(tape.value(v)) < 1e-12) {
      throw std::invalid_argument("contrastive_loss: zero-norm embedding");
    }
  }
  NodeId term_q = neg_cosine(tape, p_q, stop_gradient(tape, h_k));
  NodeId term_k = neg_cosine(tape, p_k, stop_gradient(tape, h_q));
  return scale(tape, add(tape, term_q, term_k), 0.5);
}

CvsaLoss cvsa_loss(GradientTape& tape, NodeId contrastive, NodeId alignment) {
  return CvsaLoss{add(tape, contrastive, alignment), contrastive, alignment};
}

PairForward pair_forward(GradientTape& tape, const ModelBinding& binding, const ModelConfig& cfg,
                         const ViewPair& pair) {
  expect(pair.m_q.count_ones() > 0 && pair.m_k.count_ones() > 0,
         "pair_forward: view masks must be nonempty");
  NodeId img_q = tape.constant(image_to_tensor(pair.q));
  NodeId img_k = tape.constant(image_to_tensor(pair.k));
  EncoderOut enc_q = encoder_forward(tape, img_q, binding, cfg);
  EncoderOut enc_k = encoder_forward(tape, img_k, binding, cfg);

  const std::size_t c_top = cfg.channels.back();
  NodeId pooled_rows = concat_rows(tape, reshape(tape, enc_q.pooled, {1, c_top}),
                                   reshape(tape, enc_k.pooled, {1, c_top}));
  const NodeId z_l[2] = {enc_q.stage_out[cfg.align_stage - 1],
                         enc_k.stage_out[cfg.align_stage - 1]};
  HeadsOut heads = project_and_predict(tape, z_l, pooled_rows, binding, cfg);

  NodeId cont = contrastive_loss(tape, take_row(tape, heads.p_mlp, 0),
                                 take_row(tape, heads.p_mlp, 1), take_row(tape, heads.h_mlp, 0),
                                 take_row(tape, heads.h_mlp, 1));

  const Tensor& zq = tape.value(z_l[0]);
  const std::size_t hl = zq.dim(0), wl = zq.dim(1);
  NodeId a_qk = cross_view_attention(tape, heads.p_conv[0], heads.h_conv[1]);
  NodeId a_kq = cross_view_attention(tape, heads.p_conv[1], heads.h_conv[0]);
  NodeId c_qk = correspondence_intensity(tape, a_qk, hl, wl);
  NodeId c_kq = correspondence_intensity(tape, a_kq, hl, wl);
  NodeId align = alignment_loss(tape, pair.m_q, pair.m_k, c_qk, c_kq);

  PairForward out;
  out.loss = cvsa_loss(tape, cont, align);
  out.c_qk = c_qk;
  out.c_kq = c_kq;
  return out;
}

}  // namespace cvsa
