#pragma once

#include <string>
#include <utility>

#include "vtgan/blocks.hpp"
#include "vtgan/core.hpp"
#include "vtgan/ops.hpp"
#include "vtgan/params.hpp"
#include "vtgan/resample.hpp"
#include "vtgan/tensor.hpp"

namespace vtgan {

// ---------------------------------------------------------------------------
// Coarse/fine generator pair. The coarse network runs at half resolution
// (2 downsampling blocks, 9 residual blocks, 2 upsampling blocks with SFF
// skips) and exposes its last pre-head activation; the fine network (1 down,
// 3 residual, 1 up, 1 SFF skip) consumes that feature map by elementwise sum
// right after its downsampling block.
// ---------------------------------------------------------------------------

struct GeneratorConfig {
  std::size_t fine_size = 512;
  std::size_t base_channels = 64;

  std::size_t coarse_size() const { return fine_size / 2; }
};

inline constexpr std::size_t kCoarseResidualBlocks = 9;
inline constexpr std::size_t kFineResidualBlocks = 3;
inline constexpr const char* kCoarsePrefix = "g_coarse";
inline constexpr const char* kFinePrefix = "g_fine";

template <typename T>
void build_head(ParameterStore<T>& ps, const std::string& p, std::size_t c) {
  ps.create(p + ".conv.w", {1, 1, c, 1}, Init::normal_002);
  ps.create(p + ".conv.b", {1}, Init::zeros);
}

template <typename T>
Tensor<T> head_forward(ParameterStore<T>& ps, const std::string& p,
                       const Tensor<T>& x) {
  auto y = conv2d(x, ps.at(p + ".conv.w"),
                  std::optional<Tensor<T>>(ps.at(p + ".conv.b")), 1, 1,
                  Padding::same);
  return tanh_act(y);
}

template <typename T>
void build_generators(ParameterStore<T>& ps, const GeneratorConfig& cfg) {
  std::size_t base = cfg.base_channels;
  // coarse: 3 -> base -> 2*base, residuals at 2*base, back to base
  std::string c = kCoarsePrefix;
  build_downsampling(ps, c + ".down1", 3, base);
  build_downsampling(ps, c + ".down2", base, 2 * base);
  for (std::size_t i = 1; i <= kCoarseResidualBlocks; ++i)
    build_residual(ps, c + ".res" + std::to_string(i), 2 * base);
  build_sff(ps, c + ".sff1", base);      // bridges down1 -> up2
  build_sff(ps, c + ".sff2", 2 * base);  // bridges down2 -> up1
  build_upsampling(ps, c + ".up1", 2 * base, base);
  build_upsampling(ps, c + ".up2", base, base);
  build_head(ps, c + ".head", base);
  // fine: stays at base channels
  std::string f = kFinePrefix;
  build_downsampling(ps, f + ".down1", 3, base);
  for (std::size_t i = 1; i <= kFineResidualBlocks; ++i)
    build_residual(ps, f + ".res" + std::to_string(i), base);
  build_sff(ps, f + ".sff1", base);
  build_upsampling(ps, f + ".up1", base, base);
  build_head(ps, f + ".head", base);
}

/// Runs the coarse generator on a B x S x S x 3 fundus (S = fine_size / 2).
/// Returns the synthesized angiogram (tanh head) and the S x S x base
/// feature map injected into the fine generator.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> coarse_forward(ParameterStore<T>& ps,
                                               const GeneratorConfig& cfg,
                                               const Tensor<T>& fundus_lo,
                                               const Mode& mode) {
  std::size_t s = cfg.coarse_size();
  check<ShapeError>(fundus_lo.rank() == 4 && fundus_lo.dim(1) == s &&
                        fundus_lo.dim(2) == s && fundus_lo.dim(3) == 3,
                    "coarse generator expects Bx", s, "x", s, "x3, got ",
                    shape_str(fundus_lo.shape()));
  std::string c = kCoarsePrefix;
  auto d1 = downsampling_block(ps, c + ".down1", fundus_lo, mode);
  auto d2 = downsampling_block(ps, c + ".down2", d1, mode);
  auto r = d2;
  for (std::size_t i = 1; i <= kCoarseResidualBlocks; ++i)
    r = generator_residual_block(ps, c + ".res" + std::to_string(i), r, mode);
  auto u1 = upsampling_block(ps, c + ".up1",
                             add(r, sff_block(ps, c + ".sff2", d2, mode)),
                             mode);
  auto feat = upsampling_block(ps, c + ".up2",
                               add(u1, sff_block(ps, c + ".sff1", d1, mode)),
                               mode);
  auto fa = head_forward(ps, c + ".head", feat);
  return {fa, feat};
}

/// Runs the fine generator on a B x F x F x 3 fundus plus the coarse feature
/// map; the injection is an elementwise sum at the post-downsampling
/// activation.
template <typename T>
Tensor<T> fine_forward(ParameterStore<T>& ps, const GeneratorConfig& cfg,
                       const Tensor<T>& fundus_hi,
                       const Tensor<T>& coarse_feat, const Mode& mode) {
  std::size_t f = cfg.fine_size;
  check<ShapeError>(fundus_hi.rank() == 4 && fundus_hi.dim(1) == f &&
                        fundus_hi.dim(2) == f && fundus_hi.dim(3) == 3,
                    "fine generator expects Bx", f, "x", f, "x3, got ",
                    shape_str(fundus_hi.shape()));
  std::string g = kFinePrefix;
  auto dn = downsampling_block(ps, g + ".down1", fundus_hi, mode);
  check<ShapeError>(coarse_feat.shape() == dn.shape(),
                    "coarse feature shape ", shape_str(coarse_feat.shape()),
                    " does not match injection site ", shape_str(dn.shape()));
  auto r = add(dn, coarse_feat);
  for (std::size_t i = 1; i <= kFineResidualBlocks; ++i)
    r = generator_residual_block(ps, g + ".res" + std::to_string(i), r, mode);
  auto u = upsampling_block(ps, g + ".up1",
                            add(r, sff_block(ps, g + ".sff1", dn, mode)),
                            mode);
  return head_forward(ps, g + ".head", u);
}

template <typename T>
struct SynthesisResult {
  Tensor<T> fine;    // B x F x F x 1
  Tensor<T> coarse;  // B x F/2 x F/2 x 1
};

/// Full two-scale synthesis: Lanczos-downscale the fundus, run the coarse
/// generator, then the fine generator with the injected feature map.
template <typename T>
SynthesisResult<T> synthesize(ParameterStore<T>& ps,
                              const GeneratorConfig& cfg,
                              const Tensor<T>& fundus_hi, const Mode& mode) {
  auto fundus_lo = lanczos_resize(fundus_hi, 2);
  auto [fa_coarse, feat] = coarse_forward(ps, cfg, fundus_lo, mode);
  auto fa_fine = fine_forward(ps, cfg, fundus_hi, feat, mode);
  return {fa_fine, fa_coarse};
}

}  // namespace vtgan
