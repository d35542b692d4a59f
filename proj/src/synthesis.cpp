#include "prism/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "prism/error.hpp"
#include "prism/parallel.hpp"

namespace prism {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

enum : std::uint64_t { kFamilySalt = 1, kProductSalt = 2, kQuerySalt = 3 };

class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t salt, std::uint64_t index)
        : eng_(mix(seed ^ mix(salt * 0x100000001B3ull + index))) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double uniform(Range r) { return uniform(r.lo, r.hi); }
    /// Inclusive on both ends.
    int integer(int lo, int hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

private:
    std::mt19937_64 eng_;
};

struct Rgb {
    float r, g, b;
};

// Product art never gets greener than this, while the plate stays above 190,
// so product pixels always stand clear of the background.
constexpr float kArtGreenMax = 140.0f;
constexpr float kNoise = 4.0f;

struct Art {
    int w = 0, h = 0;
    std::vector<float> rgb;

    Art(int width, int height) : w(width), h(height), rgb(static_cast<std::size_t>(width) * height * 3, 0.0f) {}

    float* at(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3; }
    const float* at(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3; }

    void put(int x, int y, Rgb c) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        float* p = at(x, y);
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
    }
    void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
        for (int y = std::max(0, y0); y < std::min(h, y1); ++y)
            for (int x = std::max(0, x0); x < std::min(w, x1); ++x) put(x, y, c);
    }
    void fill_ellipse(double cx, double cy, double rx, double ry, Rgb c) {
        for (int y = std::max(0, static_cast<int>(cy - ry)); y <= std::min(h - 1, static_cast<int>(cy + ry) + 1); ++y)
            for (int x = std::max(0, static_cast<int>(cx - rx)); x <= std::min(w - 1, static_cast<int>(cx + rx) + 1); ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                if (dx * dx + dy * dy <= 1.0) put(x, y, c);
            }
    }
};

Rgb art_color(Rng& rng) {
    return {static_cast<float>(rng.uniform(0, 255)), static_cast<float>(rng.uniform(0, kArtGreenMax)),
            static_cast<float>(rng.uniform(0, 255))};
}

Rgb ink_color(Rng& rng) {
    return {static_cast<float>(rng.uniform(0, 70)), static_cast<float>(rng.uniform(0, 70)),
            static_cast<float>(rng.uniform(0, 70))};
}

void text_row(Art& art, Rng& rng, int x0, int x1, int y, Rgb ink) {
    int x = x0;
    while (x < x1) {
        const int bw = rng.integer(2, 5);
        const int bh = rng.integer(4, 6);
        if (x + bw > x1) break;
        art.fill_rect(x, y + (6 - bh), x + bw, y + 6, ink);
        x += bw + rng.integer(1, 3);
    }
}

struct GlyphRect {
    int x0, y0, x1, y1;
};

struct Family {
    Art base;
    GlyphRect glyph;
};

Family make_family(const SynthSpec& spec, int family) {
    Rng rng(spec.seed, kFamilySalt, static_cast<std::uint64_t>(family));
    Art art(spec.art_width, spec.art_height);
    const int w = art.w, h = art.h;
    art.fill_rect(0, 0, w, h, art_color(rng));
    const int n_rects = rng.integer(6, 10);
    for (int i = 0; i < n_rects; ++i) {
        const int rw = rng.integer(w / 8, w / 2), rh = rng.integer(h / 8, h / 2);
        const int x = rng.integer(0, w - rw), y = rng.integer(0, h - rh);
        art.fill_rect(x, y, x + rw, y + rh, art_color(rng));
    }
    const int n_ellipses = rng.integer(3, 5);
    for (int i = 0; i < n_ellipses; ++i) {
        const double rx = rng.uniform(w / 16.0, w / 5.0), ry = rng.uniform(h / 16.0, h / 5.0);
        art.fill_ellipse(rng.uniform(0, w), rng.uniform(0, h), rx, ry, art_color(rng));
    }
    const int rows = rng.integer(2, 3);
    for (int i = 0; i < rows; ++i) {
        const int y = rng.integer(2, h - 9);
        const int x0 = rng.integer(2, w / 3);
        text_row(art, rng, x0, rng.integer(x0 + w / 4, w - 2), y, ink_color(rng));
    }
    const int gw = std::max(4, static_cast<int>(std::lround(spec.glyph_frac * w)));
    const int gh = std::max(4, static_cast<int>(std::lround(spec.glyph_frac * h)));
    const int gx = rng.integer(2, std::max(2, w - gw - 2));
    const int gy = rng.integer(2, std::max(2, h - gh - 2));
    return {std::move(art), {gx, gy, std::min(w, gx + gw), std::min(h, gy + gh)}};
}

Art make_product_art(const SynthSpec& spec, const Family& family, int product) {
    Rng rng(spec.seed, kProductSalt, static_cast<std::uint64_t>(product));
    Art art = family.base;
    const GlyphRect g = family.glyph;
    const int gw = g.x1 - g.x0, gh = g.y1 - g.y0;
    art.fill_rect(g.x0, g.y0, g.x1, g.y1, art_color(rng));
    const int marks = rng.integer(3, 6);
    for (int i = 0; i < marks; ++i) {
        const int mw = rng.integer(3, std::max(3, gw / 3)), mh = rng.integer(3, std::max(3, gh / 3));
        const int x = g.x0 + rng.integer(0, std::max(0, gw - mw)), y = g.y0 + rng.integer(0, std::max(0, gh - mh));
        if (rng.uniform() < 0.5)
            art.fill_rect(x, y, x + mw, y + mh, art_color(rng));
        else
            art.fill_ellipse(x + mw / 2.0, y + mh / 2.0, mw / 2.0, mh / 2.0, art_color(rng));
    }
    for (int y = g.y0 + 2; y + 7 <= g.y1; y += rng.integer(9, 14))
        text_row(art, rng, g.x0 + 2, g.x1 - 2, y, ink_color(rng));

    for (int y = 0; y < art.h; ++y)
        for (int x = 0; x < art.w; ++x) {
            float* p = art.at(x, y);
            for (int c = 0; c < 3; ++c) p[c] += static_cast<float>(rng.uniform(-kNoise, kNoise));
        }
    return art;
}

Rgb plate_at(const SynthSpec& spec, int x, int y) {
    const double fx = spec.canvas_width > 1 ? static_cast<double>(x) / (spec.canvas_width - 1) : 0.0;
    const double fy = spec.canvas_height > 1 ? static_cast<double>(y) / (spec.canvas_height - 1) : 0.0;
    return {static_cast<float>(24 + 16 * fx), static_cast<float>(196 + 8 * fy), static_cast<float>(40 - 12 * fx)};
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::array<Point2, 4> art_corners(const SynthSpec& spec) {
    const double w = spec.art_width - 1, h = spec.art_height - 1;
    return {Point2{0, 0}, Point2{w, 0}, Point2{w, h}, Point2{0, h}};
}

Homography homography_from_corners(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
    auto H = fit_homography(src, dst);
    if (!H) throw DataError("synthesis produced a degenerate warp");
    return *H;
}

/// Corners relative to the art centre after scale/rotation.
std::array<Point2, 4> centred_corners(const SynthSpec& spec, double scale, double rot_deg) {
    const double cx = (spec.art_width - 1) / 2.0, cy = (spec.art_height - 1) / 2.0;
    const double t = rot_deg * std::numbers::pi / 180.0;
    const double c = std::cos(t) * scale, s = std::sin(t) * scale;
    std::array<Point2, 4> out;
    const auto src = art_corners(spec);
    for (std::size_t i = 0; i < 4; ++i) {
        const double x = src[i].x - cx, y = src[i].y - cy;
        out[i] = {c * x - s * y, s * x + c * y};
    }
    return out;
}

Point2 canvas_centre(const SynthSpec& spec) {
    return {(spec.canvas_width - 1) / 2.0, (spec.canvas_height - 1) / 2.0};
}

Homography place(const SynthSpec& spec, std::array<Point2, 4> rel, Point2 centre) {
    for (auto& p : rel) {
        p.x += centre.x;
        p.y += centre.y;
    }
    return homography_from_corners(art_corners(spec), rel);
}

Homography view_warp(const SynthSpec& spec, ViewLabel view) {
    auto rel = centred_corners(spec, 1.0, 0.0);
    const double dw = 0.06 * spec.art_width, dh = 0.06 * spec.art_height;
    switch (view) {
        case ViewLabel::front_view: break;
        case ViewLabel::front_drop: rel = centred_corners(spec, 0.95, 7.0); break;
        case ViewLabel::back_drop: rel = centred_corners(spec, 0.95, -7.0); break;
        case ViewLabel::bottom_drop: rel = centred_corners(spec, 0.85, 0.0); break;
        case ViewLabel::side_drop:
            rel[1].y += dh;
            rel[2].y -= dh;
            break;
        case ViewLabel::top_drop:
            rel[0].x += dw;
            rel[1].x -= dw;
            break;
    }
    return place(spec, rel, canvas_centre(spec));
}

struct Photometric {
    double contrast = 1.0;
    double brightness = 0.0;
};

struct BoxI {
    int x0, y0, x1, y1;  // half-open
    bool overlaps(const BoxI& o, int margin) const {
        return x0 - margin < o.x1 && o.x0 < x1 + margin && y0 - margin < o.y1 && o.y0 < y1 + margin;
    }
};

BoxI warped_box(const SynthSpec& spec, const Homography& H) {
    double x0 = 1e18, y0 = 1e18, x1 = -1e18, y1 = -1e18;
    for (const auto& c : art_corners(spec)) {
        const auto p = H.apply(c);
        if (!p) throw DataError("synthesis warp sends the art to infinity");
        x0 = std::min(x0, p->x);
        y0 = std::min(y0, p->y);
        x1 = std::max(x1, p->x);
        y1 = std::max(y1, p->y);
    }
    return {std::max(0, static_cast<int>(std::floor(x0))), std::max(0, static_cast<int>(std::floor(y0))),
            std::min(spec.canvas_width, static_cast<int>(std::ceil(x1)) + 1),
            std::min(spec.canvas_height, static_cast<int>(std::ceil(y1)) + 1)};
}

/// Draws art under art_to_canvas; every covered pixel is set in `mask`.
void composite(Image& canvas, Mask& mask, const Art& art, const Homography& art_to_canvas, const BoxI& box,
               Photometric ph) {
    const Homography inv = *art_to_canvas.inverse();
    const double umax = art.w - 1, vmax = art.h - 1;
    for (int y = box.y0; y < box.y1; ++y)
        for (int x = box.x0; x < box.x1; ++x) {
            const auto q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            if (!q) continue;
            double u = q->x, v = q->y;
            if (u < -1e-9 || v < -1e-9 || u > umax + 1e-9 || v > vmax + 1e-9) continue;
            u = std::clamp(u, 0.0, umax);
            v = std::clamp(v, 0.0, vmax);
            const int iu = std::min(static_cast<int>(u), art.w - 2 < 0 ? 0 : art.w - 2);
            const int iv = std::min(static_cast<int>(v), art.h - 2 < 0 ? 0 : art.h - 2);
            const double fu = u - iu, fv = v - iv;
            const float* p00 = art.at(iu, iv);
            const float* p10 = art.at(iu + 1, iv);
            const float* p01 = art.at(iu, iv + 1);
            const float* p11 = art.at(iu + 1, iv + 1);
            std::uint8_t* out = canvas.at(x, y);
            for (int c = 0; c < 3; ++c) {
                const double val = (1 - fv) * ((1 - fu) * p00[c] + fu * p10[c]) + fv * ((1 - fu) * p01[c] + fu * p11[c]);
                out[c] = to_byte((val - 128.0) * ph.contrast + 128.0 + ph.brightness);
            }
            mask.set(x, y);
        }
}

void paste_patch(Image& canvas, const Art& art, int sx, int sy, const BoxI& dst) {
    for (int y = dst.y0; y < dst.y1; ++y)
        for (int x = dst.x0; x < dst.x1; ++x) {
            const float* p = art.at(sx + x - dst.x0, sy + y - dst.y0);
            std::uint8_t* out = canvas.at(x, y);
            for (int c = 0; c < 3; ++c) out[c] = to_byte(p[c]);
        }
}

/// Convex polygon: box ∩ {p : p·n ≥ t}.
std::vector<Point2> clip_box(const BoxI& box, Point2 n, double t) {
    const std::vector<Point2> poly{{box.x0 - 0.5, box.y0 - 0.5}, {box.x1 - 0.5, box.y0 - 0.5},
                                   {box.x1 - 0.5, box.y1 - 0.5}, {box.x0 - 0.5, box.y1 - 0.5}};
    std::vector<Point2> out;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point2 a = poly[i], b = poly[(i + 1) % poly.size()];
        const double da = a.x * n.x + a.y * n.y - t, db = b.x * n.x + b.y * n.y - t;
        if (da >= 0) out.push_back(a);
        if ((da >= 0) != (db >= 0)) {
            const double s = da / (da - db);
            out.push_back({a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)});
        }
    }
    return out;
}

std::string product_id_for(int p) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%04d", p);
    return buf;
}

std::string query_id_for(int p, int k) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "q%04d_%02d", p, k);
    return buf;
}

int family_of(const SynthSpec& spec, int product) { return product / spec.similarity_groups; }

Range read_range(const json& v, const char* key) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError(std::string("synth spec: ") + key + " must be [lo, hi]");
    return {v[0].get<double>(), v[1].get<double>()};
}

void check_range(Range r, double lo, double hi, const char* key) {
    if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi)
        throw ConfigError(std::string("synth spec: ") + key + " out of bounds");
}

std::string rel(const fs::path& p, const fs::path& base) {
    return p.lexically_relative(base).generic_string();
}

}  // namespace

void SynthSpec::validate() const {
    if (n_products < 1) throw ConfigError("synth spec: n_products must be >= 1");
    if (n_queries_per_product < 0) throw ConfigError("synth spec: n_queries_per_product must be >= 0");
    if (art_width < 16 || art_height < 16) throw ConfigError("synth spec: art must be at least 16x16");
    if (canvas_width < art_width + 8 || canvas_height < art_height + 8)
        throw ConfigError("synth spec: canvas must exceed art by 8 px per axis");
    if (canvas_width > 4096 || canvas_height > 4096) throw ConfigError("synth spec: canvas too large");
    check_range(perspective_jitter, 0.0, 0.25, "perspective_jitter");
    check_range(rotation_deg, -45.0, 45.0, "rotation_deg");
    check_range(scale, 0.3, 1.5, "scale");
    check_range(occlusion_frac, 0.0, 0.9, "occlusion_frac");
    check_range(brightness, -60.0, 60.0, "brightness");
    check_range(contrast, 0.5, 1.5, "contrast");
    if (!(translate_frac >= 0.0 && translate_frac <= 1.0)) throw ConfigError("synth spec: translate_frac in [0, 1]");
    if (!(clutter_density >= 0.0 && clutter_density <= 1.0)) throw ConfigError("synth spec: clutter_density in [0, 1]");
    if (similarity_groups < 1) throw ConfigError("synth spec: similarity_groups must be >= 1");
    if (!(glyph_frac > 0.05 && glyph_frac <= 0.9)) throw ConfigError("synth spec: glyph_frac in (0.05, 0.9]");
}

SynthSpec synth_spec_from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("synth spec must be a JSON object");
    SynthSpec s;
    auto integer = [](const json& v, const char* key) {
        if (!v.is_number_integer()) throw ConfigError(std::string("synth spec: ") + key + " must be an integer");
        return v.get<long long>();
    };
    auto number = [](const json& v, const char* key) {
        if (!v.is_number()) throw ConfigError(std::string("synth spec: ") + key + " must be a number");
        return v.get<double>();
    };
    for (const auto& [key, v] : doc.items()) {
        const char* k = key.c_str();
        if (key == "n_products") s.n_products = static_cast<int>(integer(v, k));
        else if (key == "n_queries_per_product") s.n_queries_per_product = static_cast<int>(integer(v, k));
        else if (key == "canvas_width") s.canvas_width = static_cast<int>(integer(v, k));
        else if (key == "canvas_height") s.canvas_height = static_cast<int>(integer(v, k));
        else if (key == "art_width") s.art_width = static_cast<int>(integer(v, k));
        else if (key == "art_height") s.art_height = static_cast<int>(integer(v, k));
        else if (key == "perspective_jitter") s.perspective_jitter = read_range(v, k);
        else if (key == "rotation_deg") s.rotation_deg = read_range(v, k);
        else if (key == "scale") s.scale = read_range(v, k);
        else if (key == "translate_frac") s.translate_frac = number(v, k);
        else if (key == "clutter_density") s.clutter_density = number(v, k);
        else if (key == "occlusion_frac") s.occlusion_frac = read_range(v, k);
        else if (key == "brightness") s.brightness = read_range(v, k);
        else if (key == "contrast") s.contrast = read_range(v, k);
        else if (key == "similarity_groups") s.similarity_groups = static_cast<int>(integer(v, k));
        else if (key == "glyph_frac") s.glyph_frac = number(v, k);
        else if (key == "seed") {
            if (!v.is_number_unsigned() && !v.is_number_integer()) throw ConfigError("synth spec: seed must be an integer");
            s.seed = v.get<std::uint64_t>();
        } else
            throw ConfigError("synth spec: unknown key '" + key + "'");
    }
    s.validate();
    return s;
}

json to_json(const SynthSpec& s) {
    auto r = [](Range x) { return json::array({x.lo, x.hi}); };
    return json{{"n_products", s.n_products},
                {"n_queries_per_product", s.n_queries_per_product},
                {"canvas_width", s.canvas_width},
                {"canvas_height", s.canvas_height},
                {"art_width", s.art_width},
                {"art_height", s.art_height},
                {"perspective_jitter", r(s.perspective_jitter)},
                {"rotation_deg", r(s.rotation_deg)},
                {"scale", r(s.scale)},
                {"translate_frac", s.translate_frac},
                {"clutter_density", s.clutter_density},
                {"occlusion_frac", r(s.occlusion_frac)},
                {"brightness", r(s.brightness)},
                {"contrast", r(s.contrast)},
                {"similarity_groups", s.similarity_groups},
                {"glyph_frac", s.glyph_frac},
                {"seed", s.seed}};
}

SynthSpec load_synth_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synth spec " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("synth spec " + path.string() + ": " + e.what());
    }
    return synth_spec_from_json(doc);
}

Image render_background(const SynthSpec& spec) {
    Image img(spec.canvas_width, spec.canvas_height, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const Rgb c = plate_at(spec, x, y);
            std::uint8_t* p = img.at(x, y);
            p[0] = to_byte(c.r);
            p[1] = to_byte(c.g);
            p[2] = to_byte(c.b);
        }
    return img;
}

CatalogManifest generate_catalog(const SynthSpec& spec, const fs::path& out_dir, int workers) {
    spec.validate();
    const fs::path root = fs::absolute(out_dir);
    fs::create_directories(root / "gallery");
    const Image plate = render_background(spec);
    save_png(plate, root / "background.png");

    const int n_families = (spec.n_products + spec.similarity_groups - 1) / spec.similarity_groups;
    std::vector<std::optional<Family>> families(static_cast<std::size_t>(n_families));
    parallel_for(families.size(), workers, [&](std::size_t f) { families[f] = make_family(spec, static_cast<int>(f)); });

    std::vector<ProductRecord> products(static_cast<std::size_t>(spec.n_products));
    parallel_for(products.size(), workers, [&](std::size_t i) {
        const int p = static_cast<int>(i);
        const Art art = make_product_art(spec, *families[static_cast<std::size_t>(family_of(spec, p))], p);
        ProductRecord rec;
        rec.product_id = product_id_for(p);
        const int family = family_of(spec, p);
        char name[48];
        std::snprintf(name, sizeof name, "family %02d item %d", family, p % spec.similarity_groups);
        rec.display_name = name;
        rec.coarse_class = static_cast<CoarseClass>(family % 3);
        for (ViewLabel view : kAllViews) {
            const Homography H = view_warp(spec, view);
            Image img = plate;
            Mask mask(spec.canvas_width, spec.canvas_height);
            composite(img, mask, art, H, warped_box(spec, H), {});
            const std::string stem = rec.product_id + "_" + std::string(to_string(view));
            const fs::path img_path = root / "gallery" / (stem + ".png");
            const fs::path mask_path = root / "gallery" / (stem + "_mask.png");
            save_png(img, img_path);
            save_mask(mask, mask_path);
            rec.views.push_back({view, img_path, mask_path, stem});
        }
        products[i] = std::move(rec);
    });

    CatalogManifest catalog(std::move(products), root);
    save_manifest(catalog, root / "manifest.json");
    return catalog;
}

std::pair<std::vector<SynthRecord>, std::vector<QueryLabel>> generate_queries(
    const SynthSpec& spec, const CatalogManifest& catalog, const fs::path& out_dir, int workers) {
    spec.validate();
    const fs::path root = fs::absolute(out_dir);
    fs::create_directories(root / "queries");
    const Image plate = render_background(spec);
    const int n = static_cast<int>(catalog.size());
    if (n != spec.n_products) throw DataError("catalog does not match the synth spec");

    const int n_families = (n + spec.similarity_groups - 1) / spec.similarity_groups;
    std::vector<std::optional<Family>> families(static_cast<std::size_t>(n_families));
    parallel_for(families.size(), workers, [&](std::size_t f) { families[f] = make_family(spec, static_cast<int>(f)); });
    std::vector<std::optional<Art>> arts(static_cast<std::size_t>(n));
    parallel_for(arts.size(), workers, [&](std::size_t p) {
        arts[p] = make_product_art(spec, *families[static_cast<std::size_t>(family_of(spec, static_cast<int>(p)))],
                                   static_cast<int>(p));
    });

    const Homography front = view_warp(spec, ViewLabel::front_view);
    const Homography front_inv = *front.inverse();
    const int nq = spec.n_queries_per_product;
    std::vector<SynthRecord> records(static_cast<std::size_t>(n) * static_cast<std::size_t>(nq));

    parallel_for(records.size(), workers, [&](std::size_t idx) {
        const int p = static_cast<int>(idx) / nq, k = static_cast<int>(idx) % nq;
        Rng rng(spec.seed, kQuerySalt, idx);
        const Art& art = *arts[static_cast<std::size_t>(p)];

        const double s = rng.uniform(spec.scale);
        const double rot = rng.uniform(spec.rotation_deg);
        const double jit = rng.uniform(spec.perspective_jitter);
        auto rel = centred_corners(spec, s, rot);
        for (auto& c : rel) {
            c.x += rng.uniform(-jit, jit) * spec.art_width;
            c.y += rng.uniform(-jit, jit) * spec.art_height;
        }
        double minx = 1e18, maxx = -1e18, miny = 1e18, maxy = -1e18;
        for (const auto& c : rel) {
            minx = std::min(minx, c.x);
            maxx = std::max(maxx, c.x);
            miny = std::min(miny, c.y);
            maxy = std::max(maxy, c.y);
        }
        auto pick = [&](double lo, double hi) {
            const double mid = (lo + hi) / 2.0;
            const double off = rng.uniform(-0.5, 0.5);
            return hi < lo ? mid : mid + spec.translate_frac * off * (hi - lo);
        };
        const double cx = pick(2.0 - minx, spec.canvas_width - 3.0 - maxx);
        const double cy = pick(2.0 - miny, spec.canvas_height - 3.0 - maxy);
        const Homography Hq = place(spec, rel, {cx, cy});
        const BoxI pbox = warped_box(spec, Hq);

        Image img = plate;
        std::vector<BoxI> placed;
        if (spec.clutter_density > 0.0) {
            const double free_area = static_cast<double>(spec.canvas_width) * spec.canvas_height -
                                     static_cast<double>(pbox.x1 - pbox.x0) * (pbox.y1 - pbox.y0);
            const double target = spec.clutter_density * std::max(0.0, free_area);
            const int fam = family_of(spec, p);
            double covered = 0.0;
            for (int attempt = 0; attempt < 400 && covered < target; ++attempt) {
                int src = p;
                if (n > 1) {
                    const int fam_lo = fam * spec.similarity_groups;
                    const int fam_hi = std::min(n, fam_lo + spec.similarity_groups) - 1;
                    while (src == p)
                        src = (fam_hi > fam_lo && rng.uniform() < 0.5) ? rng.integer(fam_lo, fam_hi)
                                                                       : rng.integer(0, n - 1);
                }
                const Art& sa = *arts[static_cast<std::size_t>(src)];
                const int pw = rng.integer(16, std::min(40, sa.w)), ph = rng.integer(16, std::min(40, sa.h));
                const int sx = rng.integer(0, sa.w - pw), sy = rng.integer(0, sa.h - ph);
                const int x = rng.integer(1, spec.canvas_width - pw - 1), y = rng.integer(1, spec.canvas_height - ph - 1);
                const BoxI b{x, y, x + pw, y + ph};
                if (b.overlaps(pbox, 6)) continue;
                if (std::any_of(placed.begin(), placed.end(), [&](const BoxI& o) { return b.overlaps(o, 3); })) continue;
                paste_patch(img, sa, sx, sy, b);
                placed.push_back(b);
                covered += static_cast<double>(pw) * ph;
            }
        }

        const Photometric ph{rng.uniform(spec.contrast), rng.uniform(spec.brightness)};
        Mask mask(spec.canvas_width, spec.canvas_height);
        composite(img, mask, art, Hq, pbox, ph);

        SynthRecord rec;
        const double occ = rng.uniform(spec.occlusion_frac);
        if (occ > 0.0) {
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const Point2 nrm{std::cos(phi), std::sin(phi)};
            std::vector<double> proj;
            for (int y = pbox.y0; y < pbox.y1; ++y)
                for (int x = pbox.x0; x < pbox.x1; ++x)
                    if (mask.test(x, y)) proj.push_back(x * nrm.x + y * nrm.y);
            const std::size_t total = proj.size();
            const auto remove = static_cast<std::size_t>(std::llround(occ * static_cast<double>(total)));
            if (remove > 0 && total > 0) {
                std::nth_element(proj.begin(), proj.begin() + static_cast<std::ptrdiff_t>(remove - 1), proj.end(),
                                 std::greater<>());
                const double t = proj[remove - 1];
                std::size_t removed = 0;
                for (int y = pbox.y0; y < pbox.y1; ++y)
                    for (int x = pbox.x0; x < pbox.x1; ++x)
                        if (mask.test(x, y) && x * nrm.x + y * nrm.y >= t) {
                            mask.set(x, y, false);
                            std::copy_n(plate.at(x, y), 3, img.at(x, y));
                            ++removed;
                        }
                rec.occlusion_frac = static_cast<double>(removed) / static_cast<double>(total);
                rec.occlusion_polygons.push_back(clip_box(pbox, nrm, t));
            }
        }

        rec.query_id = query_id_for(p, k);
        rec.true_product_id = catalog.products()[static_cast<std::size_t>(p)].product_id;
        rec.image = root / "queries" / (rec.query_id + ".png");
        rec.mask = root / "queries" / (rec.query_id + "_mask.png");
        Homography Hrec;
        const auto& a = Hq.h;
        const auto& b = front_inv.h;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (int j = 0; j < 3; ++j) v += a[r * 3 + j] * b[j * 3 + c];
                Hrec.h[r * 3 + c] = v;
            }
        for (double& v : Hrec.h) v /= Hrec.h[8];
        rec.homography = Hrec;
        rec.coarse_class = catalog.products()[static_cast<std::size_t>(p)].coarse_class;
        save_png(img, rec.image);
        save_mask(mask, *rec.mask);
        records[idx] = std::move(rec);
    });

    save_query_file(records, root / "queries.json");
    return {records, labels_of(records)};
}

SynthDataset synthesize(const SynthSpec& spec, const fs::path& out_dir, int workers) {
    const fs::path root = fs::absolute(out_dir);
    CatalogManifest catalog = generate_catalog(spec, root, workers);
    auto [records, labels] = generate_queries(spec, catalog, root, workers);
    {
        std::ofstream out(root / "synth_spec.json");
        out << to_json(spec).dump(2) << '\n';
    }
    return {std::move(catalog), std::move(records), std::move(labels), root / "manifest.json",
            root / "queries.json", root / "background.png"};
}

std::vector<QueryLabel> labels_of(const std::vector<SynthRecord>& records) {
    std::vector<QueryLabel> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.query_id, r.true_product_id});
    return out;
}

void save_query_file(const std::vector<SynthRecord>& records, const fs::path& path) {
    const fs::path base = fs::absolute(path).parent_path();
    json arr = json::array();
    for (const auto& r : records) {
        json o{{"query_id", r.query_id}, {"image", rel(r.image, base)}, {"true_product_id", r.true_product_id}};
        if (r.mask) o["mask"] = rel(*r.mask, base);
        if (r.homography) o["homography"] = r.homography->h;
        o["occlusion_frac"] = r.occlusion_frac;
        if (!r.occlusion_polygons.empty()) {
            json polys = json::array();
            for (const auto& poly : r.occlusion_polygons) {
                json pts = json::array();
                for (const auto& q : poly) pts.push_back({q.x, q.y});
                polys.push_back(pts);
            }
            o["occlusion_polygons"] = polys;
        }
        if (r.coarse_class) o["query_class"] = std::string(to_string(*r.coarse_class));
        arr.push_back(std::move(o));
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << arr.dump(2) << '\n';
}

std::vector<SynthRecord> load_query_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open query file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("query file " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw DataError("query file must hold a JSON array");
    const fs::path base = fs::absolute(path).parent_path();
    auto resolve = [&](const json& v, const char* key) {
        if (!v.is_string()) throw DataError(std::string("query file: ") + key + " must be a string");
        fs::path p = v.get<std::string>();
        return p.is_absolute() ? p : (base / p).lexically_normal();
    };
    std::vector<SynthRecord> out;
    for (const auto& o : doc) {
        if (!o.is_object()) throw DataError("query file entries must be objects");
        SynthRecord r;
        for (const char* key : {"query_id", "image", "true_product_id"})
            if (!o.contains(key) || !o[key].is_string()) throw DataError(std::string("query file: missing ") + key);
        r.query_id = o["query_id"].get<std::string>();
        r.image = resolve(o["image"], "image");
        r.true_product_id = o["true_product_id"].get<std::string>();
        if (o.contains("mask")) r.mask = resolve(o["mask"], "mask");
        if (o.contains("homography")) {
            const auto& h = o["homography"];
            if (!h.is_array() || h.size() != 9) throw DataError("query file: homography must have 9 numbers");
            Homography H;
            for (std::size_t i = 0; i < 9; ++i) {
                if (!h[i].is_number()) throw DataError("query file: homography must have 9 numbers");
                H.h[i] = h[i].get<double>();
            }
            r.homography = H;
        }
        if (o.contains("occlusion_frac")) {
            if (!o["occlusion_frac"].is_number()) throw DataError("query file: occlusion_frac must be a number");
            r.occlusion_frac = o["occlusion_frac"].get<double>();
        }
        if (o.contains("occlusion_polygons")) {
            for (const auto& poly : o["occlusion_polygons"]) {
                std::vector<Point2> pts;
                for (const auto& q : poly) {
                    if (!q.is_array() || q.size() != 2) throw DataError("query file: bad polygon vertex");
                    pts.push_back({q[0].get<double>(), q[1].get<double>()});
                }
                r.occlusion_polygons.push_back(std::move(pts));
            }
        }
        if (o.contains("query_class")) {
            if (!o["query_class"].is_string()) throw DataError("query file: query_class must be a string");
            r.coarse_class = parse_coarse_class(o["query_class"].get<std::string>());
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace prism
