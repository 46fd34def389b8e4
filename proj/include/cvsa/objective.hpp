#pragma once

#include "cvsa/augment.hpp"
#include "cvsa/network.hpp"
#include "cvsa/tape.hpp"

namespace cvsa {

// Pairwise dot products between the predictor-projected pixels of the query
// view and the (gradient-stopped) projected pixels of the key view:
// flatten both [H×W×d] maps to [HW×d] and take pred_q · h_kᵀ.
NodeId cross_view_attention(GradientTape& tape, NodeId pred_q, NodeId h_k);

// Row-wise max of sigmoid(attention), reshaped to the stage resolution.
// Entries live strictly inside (0,1).
NodeId correspondence_intensity(GradientTape& tape, NodeId attention, std::size_t h,
                                std::size_t w);

// Symmetrized mean squared error between the bilinearly downsampled masks and
// the two intensity maps.
NodeId alignment_loss(GradientTape& tape, const BinaryMask& m_q, const BinaryMask& m_k,
                      NodeId c_qk, NodeId c_kq);

// Symmetrized negative cosine similarity with gradient-stopped projections:
//   L = 1/2 D(p_q, sg(h_k)) + 1/2 D(p_k, sg(h_q)),  D(p,h) = -(p·h)/(|p||h|)
// Inputs must have norm >= 1e-12.
NodeId contrastive_loss(GradientTape& tape, NodeId p_q, NodeId p_k, NodeId h_q, NodeId h_k);

struct CvsaLoss {
  NodeId total;
  NodeId contrastive;
  NodeId alignment;
};

CvsaLoss cvsa_loss(GradientTape& tape, NodeId contrastive, NodeId alignment);

// Full per-pair forward pass: encoder on both views, all four heads, the two
// attention/intensity maps, and both loss components.
struct PairForward {
  CvsaLoss loss;
  NodeId c_qk, c_kq;
};

PairForward pair_forward(GradientTape& tape, const ModelBinding& binding, const ModelConfig& cfg,
                         const ViewPair& pair);

}  // namespace cvsa
