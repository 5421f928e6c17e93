#include "hylo/encoder.hpp"

#include <cmath>
#include <string>

namespace hylo {

void RegionFeature::validate(int d_roi, int num_regions) const {
    if (static_cast<int>(roi.size()) != d_roi)
        throw shape_error("region: roi length " + std::to_string(roi.size()) + ", expected " + std::to_string(d_roi));
    for (double c : bbox)
        if (!(c >= 0.0 && c <= 1.0)) throw contract_error("region: bbox coordinate outside [0,1]");
    if (bbox[0] > bbox[2] || bbox[1] > bbox[3]) throw contract_error("region: bbox corners not ordered");
    if (region_index < 0 || region_index >= num_regions)
        throw index_error("region: index " + std::to_string(region_index) + " out of " + std::to_string(num_regions));
}

EncoderParams EncoderParams::init(int d, int d_roi, int num_regions, Rng& rng) {
    EncoderParams p;
    p.w_roi = Tensor::randn(d, d_roi, rng, 1.0 / std::sqrt(static_cast<double>(d_roi)));
    p.w_box = Tensor::randn(d, 4, rng, 0.5);
    p.e_id = Tensor::randn(num_regions, d, rng, 0.1);
    return p;
}

std::vector<Tensor*> EncoderParams::tensors() { return {&w_roi, &w_box, &e_id}; }

void EncoderParams::set_requires_grad(bool on) {
    for (Tensor* t : tensors()) t->requires_grad = on;
}

EncoderVars stage_encoder(Tape& tape, EncoderParams& params, bool trainable) {
    EncoderVars v;
    if (trainable) {
        v.w_roi = tape.param(params.w_roi);
        v.w_box = tape.param(params.w_box);
        v.e_id = tape.param(params.e_id);
    } else {
        v.w_roi = tape.constant(params.w_roi);
        v.w_box = tape.constant(params.w_box);
        v.e_id = tape.constant(params.e_id);
    }
    return v;
}

Var build_region_token(Tape& tape, const EncoderVars& enc, const RegionFeature& region) {
    region.validate(enc.w_roi.cols, enc.e_id.rows);
    Tensor roi(static_cast<int>(region.roi.size()), 1);
    roi.data = region.roi;
    Tensor box(4, 1);
    for (int i = 0; i < 4; ++i) box.data[i] = region.bbox[i];
    Var tok = tape.add(tape.matmul(enc.w_roi, tape.constant(roi)), tape.matmul(enc.w_box, tape.constant(box)));
    return tape.add(tok, tape.select_row(enc.e_id, region.region_index));
}

Var encode_regions(Tape& tape, const EncoderVars& enc, std::span<const RegionFeature> regions) {
    if (regions.empty()) throw empty_error("encode_regions: no regions");
    std::vector<Var> tokens;
    tokens.reserve(regions.size());
    for (const RegionFeature& r : regions) tokens.push_back(build_region_token(tape, enc, r));
    return tape.stack_rows(tokens);
}

Var visual_summary(Tape& tape, Var tokens) {
    if (tokens.rows < 1) throw empty_error("visual_summary: no region tokens");
    return tape.mean_rows(tokens);
}

Var question_summary(Tape& tape, Var tokens) {
    if (tokens.rows < 1) throw empty_error("question_summary: no question tokens");
    return tape.mean_rows(tokens);
}

}  // namespace hylo
