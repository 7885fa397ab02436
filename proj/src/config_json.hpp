#pragma once

// JSON mappings for configuration structs stored in checkpoints and
// reproducibility records.

#include "json.hpp"
#include "seal2real/diffusion.hpp"
#include "seal2real/seal_synth.hpp"
#include "seal2real/stage1.hpp"
#include "seal2real/stage2.hpp"

namespace seal2real {

namespace diffusion {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(UNetConfig, latent_channels, latent_size, base_channels, mid_channels, prompt_dim,
                                   prompt_len, attn_dim, groups, time_dim, num_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AutoencoderConfig, factor, latent_channels, width)
}  // namespace diffusion

namespace stage1 {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PriorConfig, unet, autoencoder, beta_min, beta_max, real_prompt, forgery_prompt,
                                   lr_prompt, lr_unet)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Plateau, ema, best, since_best, started)
}  // namespace stage1

namespace stage2 {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ForgerConfig, image_size, channels)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FeatureConfig, channels, alpha, seed, identity)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ForgerSetup, forger, features, w, lr_forger)
}  // namespace stage2

namespace synth {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Range, min, max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DocumentStyle, paper_rgb, paper_jitter, line_gray, line_height, line_pitch, margin,
                                   scanner_noise)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SynthConfig, doc_width, doc_height, outer_radius, ring_width, glyph_height,
                                   arc_span, star_scale, base_opacity, texture_strength, texture_cell, rotation, shear,
                                   radial, ink_mean, ink_sigma, text_pool, random_text_length, text_alphabet,
                                   mask_threshold, document)
}  // namespace synth

}  // namespace seal2real
