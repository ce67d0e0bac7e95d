#include "coar/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>

#include "coar/rng.hpp"

namespace coar {
namespace {

constexpr int kMinCellSize = 6;

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::array<double, 3> hue_color(double hue) {
  const double h = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  std::array<double, 3> rgb{};
  switch (sector) {
    case 0: rgb = {1.0, f, 0.0}; break;
    case 1: rgb = {1.0 - f, 1.0, 0.0}; break;
    case 2: rgb = {0.0, 1.0, f}; break;
    case 3: rgb = {0.0, 1.0 - f, 1.0}; break;
    case 4: rgb = {f, 0.0, 1.0}; break;
    default: rgb = {1.0, 0.0, 1.0 - f}; break;
  }
  for (double& c : rgb) c = 0.25 + 0.75 * c;
  return rgb;
}

Tensor make_glyphs(int K, int size, int channels, Rng& rng) {
  Tensor glyphs({K, size, size, channels});
  std::bernoulli_distribution bit(0.5);
  const std::size_t per_glyph = static_cast<std::size_t>(size) * size * channels;
  for (int j = 0; j < K; ++j) {
    const auto rgb = hue_color(static_cast<double>(j) / K);
    // redraw until the mask covers a reasonable share of the cell
    std::vector<bool> mask;
    int on = 0;
    do {
      mask.assign(static_cast<std::size_t>(size) * size, false);
      on = 0;
      for (std::size_t p = 0; p < mask.size(); ++p) {
        mask[p] = bit(rng);
        on += mask[p];
      }
    } while (on < static_cast<int>(mask.size()) / 4);
    for (int p = 0; p < size * size; ++p) {
      if (!mask[static_cast<std::size_t>(p)]) continue;
      for (int c = 0; c < channels; ++c) {
        const double v = channels == 3 ? rgb[static_cast<std::size_t>(c)] : (rgb[0] + rgb[1] + rgb[2]) / 3.0;
        glyphs[j * per_glyph + static_cast<std::size_t>(p) * channels + c] = v;
      }
    }
  }
  return glyphs;
}

std::vector<std::vector<int>> draw_subsets(const SynthSpec& spec, Rng& rng) {
  const int K = spec.num_attributes;
  const int n = spec.n_seen + spec.n_unseen;
  int lo = std::max(1, K / 4);
  int hi = std::max(lo, K / 2);
  double available = 0.0;
  for (int s = lo; s <= hi; ++s) available += binomial(K, s);
  if (available < n) {
    lo = 1;
    hi = K;
  }
  std::uniform_int_distribution<int> size_dist(lo, hi);

  std::vector<std::vector<int>> best;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::set<std::vector<int>> used;
    std::vector<std::vector<int>> subsets;
    while (static_cast<int>(subsets.size()) < n) {
      std::vector<int> attrs(static_cast<std::size_t>(K));
      std::iota(attrs.begin(), attrs.end(), 0);
      std::shuffle(attrs.begin(), attrs.end(), rng);
      attrs.resize(static_cast<std::size_t>(size_dist(rng)));
      std::sort(attrs.begin(), attrs.end());
      if (used.insert(attrs).second) subsets.push_back(std::move(attrs));
    }
    // prefer draws where every attribute is exhibited by some seen class
    std::vector<bool> covered(static_cast<std::size_t>(K), false);
    for (int c = 0; c < spec.n_seen; ++c) {
      for (int a : subsets[static_cast<std::size_t>(c)]) covered[static_cast<std::size_t>(a)] = true;
    }
    best = std::move(subsets);
    if (std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) break;
  }
  return best;
}

}  // namespace

int glyph_grid_side(int num_attributes) {
  int g = 1;
  while (g * g < num_attributes) ++g;
  return g;
}

Tensor render_class_image(const GlyphLayout& layout, int label, int image_size, int channels) {
  Tensor img({image_size, image_size, channels});
  const int g = layout.cell_size - 2 * layout.margin;
  const auto& cells = layout.class_cells.at(static_cast<std::size_t>(label));
  const std::size_t per_glyph = static_cast<std::size_t>(g) * g * channels;
  for (std::size_t attr = 0; attr < cells.size(); ++attr) {
    const int cell = cells[attr];
    if (cell < 0) continue;
    const int y0 = (cell / layout.grid) * layout.cell_size + layout.margin;
    const int x0 = (cell % layout.grid) * layout.cell_size + layout.margin;
    for (int y = 0; y < g; ++y) {
      for (int x = 0; x < g; ++x) {
        for (int c = 0; c < channels; ++c) {
          img.at(y0 + y, x0 + x, c) = layout.glyphs[attr * per_glyph + (static_cast<std::size_t>(y) * g + x) * channels + c];
        }
      }
    }
  }
  return img;
}

Dataset generate_synthetic(const SynthSpec& spec) {
  const int K = spec.num_attributes;
  const int n = spec.n_seen + spec.n_unseen;
  if (spec.n_seen < 1 || spec.n_unseen < 0 || n < 2) throw SynthSpecError("need n_seen >= 1 and n_seen + n_unseen >= 2");
  if (K < 4) throw SynthSpecError("need at least 4 attributes");
  if (K < 62 && (std::uint64_t{1} << K) - 1 < static_cast<std::uint64_t>(n)) {
    throw SynthSpecError("cannot build " + std::to_string(n) + " distinct non-empty attribute subsets from " +
                         std::to_string(K) + " attributes");
  }
  if (spec.images_per_class < 1) throw SynthSpecError("images_per_class must be positive");
  if (spec.channels != 1 && spec.channels != 3) throw SynthSpecError("channels must be 1 or 3");
  if (spec.noise_std < 0.0 || spec.semantics_jitter < 0.0) throw SynthSpecError("noise levels must be non-negative");
  if (spec.test_fraction < 0.0 || spec.test_fraction >= 1.0) throw SynthSpecError("test_fraction must be in [0, 1)");
  const int grid = glyph_grid_side(K);
  const int cell = spec.image_size / grid;
  if (cell < kMinCellSize) {
    throw SynthSpecError("image_size " + std::to_string(spec.image_size) + " too small for " + std::to_string(K) +
                         " glyph cells");
  }

  Rng rng(derive_seed(spec.seed, "synthetic"));
  GlyphLayout layout;
  layout.grid = grid;
  layout.cell_size = cell;
  layout.margin = std::max(1, cell / 8);
  layout.glyphs = make_glyphs(K, cell - 2 * layout.margin, spec.channels, rng);

  const auto subsets = draw_subsets(spec, rng);
  Dataset d;
  d.num_classes = n;
  d.num_attributes = K;
  d.image_size = spec.image_size;
  d.channels = spec.channels;
  d.semantics.mode = AttributeSemanticsMode::OneHot;
  d.semantics.attribute_semantics = make_attribute_semantics(K, AttributeSemanticsMode::OneHot, spec.seed);
  d.semantics.class_semantics = Tensor({n, K});
  std::uniform_real_distribution<double> jitter(-spec.semantics_jitter, spec.semantics_jitter);
  for (int c = 0; c < n; ++c) {
    std::vector<int> cells(static_cast<std::size_t>(grid * grid));
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    std::vector<int> placement(static_cast<std::size_t>(K), -1);
    const auto& attrs = subsets[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < attrs.size(); ++i) {
      placement[static_cast<std::size_t>(attrs[i])] = cells[i];
      double v = 1.0;
      if (spec.semantics_jitter > 0.0) v = std::max(1e-3, v + jitter(rng));
      d.semantics.class_semantics.at(c, attrs[i]) = v;
    }
    layout.class_cells.push_back(std::move(placement));
  }
  for (int c = 0; c < spec.n_seen; ++c) d.seen_classes.push_back(c);
  for (int c = spec.n_seen; c < n; ++c) d.unseen_classes.push_back(c);

  const int n_test = static_cast<int>(std::floor(spec.images_per_class * spec.test_fraction));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int c = 0; c < n; ++c) {
    const Tensor clean = render_class_image(layout, c, spec.image_size, spec.channels);
    const bool seen = c < spec.n_seen;
    for (int i = 0; i < spec.images_per_class; ++i) {
      Sample s;
      s.image = clean;
      s.image.set_dtype(DType::F32);
      for (double& v : s.image.values()) {
        if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
        v = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      s.label = c;
      s.split = (seen && i < spec.images_per_class - n_test) ? Split::Train : Split::Test;
      d.samples.push_back(std::move(s));
    }
  }
  d.layout = std::move(layout);
  d.validate();
  return d;
}

}  // namespace coar
