#pragma once

#include <array>
#include <span>
#include <vector>

#include "hylo/tensor.hpp"

namespace hylo {

// One detected region: synthetic appearance feature, normalized box, slot id.
struct RegionFeature {
    std::vector<double> roi;            // length d_roi
    std::array<double, 4> bbox{};       // [x1, y1, x2, y2] in [0, 1]
    int region_index = 0;

    void validate(int d_roi, int num_regions) const;
};

// Trainable projections that turn raw region features into d-dim tokens.
// Question tokens arrive already in token space, so the text side only pools.
struct EncoderParams {
    Tensor w_roi;   // d x d_roi
    Tensor w_box;   // d x 4
    Tensor e_id;    // num_regions x d, one learned embedding per region slot

    static EncoderParams init(int d, int d_roi, int num_regions, Rng& rng);
    std::vector<Tensor*> tensors();
    void set_requires_grad(bool on);
};

// Tape handles for the encoder parameters, staged once per tape.
struct EncoderVars {
    Var w_roi, w_box, e_id;
};

EncoderVars stage_encoder(Tape& tape, EncoderParams& params, bool trainable);

// v_j = W_roi * roi + W_box * bbox + E_id[region_index]
Var build_region_token(Tape& tape, const EncoderVars& enc, const RegionFeature& region);

// N region features -> N x d token matrix
Var encode_regions(Tape& tape, const EncoderVars& enc, std::span<const RegionFeature> regions);

// mean pooling over rows (both summaries use the same pooling)
Var visual_summary(Tape& tape, Var tokens);
Var question_summary(Tape& tape, Var tokens);

}  // namespace hylo
