#include "sva/shapes.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <utility>

#include "sva/error.hpp"

namespace sva {

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = {
        "<pad>",  "is",     "red",      "green", "blue",  "circle",
        "square", "triangle", "above",  "below", "left_of", "right_of",
    };
    return words;
}

namespace {

bool is_attr(int id) { return id >= kRedTok && id <= kTriangleTok; }
bool is_color(int id) { return id >= kRedTok && id <= kBlueTok; }
bool is_rel(int id) { return id >= kAboveTok && id <= kRightOfTok; }

bool cell_matches(const Cell& cell, int attr) {
    if (!cell.occupied) return false;
    return is_color(attr) ? cell.color == attr : cell.shape == attr;
}

// Step from the first-mentioned object's cell toward the second one:
// "is A below B" places A directly under B, so the chain walks upward.
std::pair<int, int> rel_step(int rel) {
    switch (rel) {
        case kBelowTok: return {-1, 0};
        case kAboveTok: return {1, 0};
        case kLeftOfTok: return {0, 1};
        case kRightOfTok: return {0, -1};
        default: throw DataError("token id " + std::to_string(rel) + " is not a relation");
    }
}

} // namespace

int Layout::occupied_count() const {
    int n = 0;
    for (const Cell& cell : cells) n += cell.occupied ? 1 : 0;
    return n;
}

std::vector<int> tokenize(const std::string& text) {
    std::vector<int> ids;
    std::istringstream is(text);
    std::string word;
    while (is >> word) {
        const auto& vocab = vocabulary();
        const auto it = std::find(vocab.begin(), vocab.end(), word);
        if (it == vocab.end() || it == vocab.begin())
            throw DataError("unknown word: " + word);
        ids.push_back(static_cast<int>(it - vocab.begin()));
    }
    return ids;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string text;
    for (int id : ids) {
        if (id == kPadTok) break;
        if (id < 0 || id >= kVocabSize)
            throw DataError("token id " + std::to_string(id) + " outside vocabulary");
        if (!text.empty()) text += ' ';
        text += vocabulary()[static_cast<std::size_t>(id)];
    }
    return text;
}

void validate_query(const std::vector<int>& ids) {
    const auto n = ids.size();
    if (n < 3 || n > 5)
        throw DataError("query must have 3 to 5 tokens, got " + std::to_string(n));
    if (ids[0] != kIsTok) throw DataError("query must start with 'is'");
    if (!is_attr(ids[1]) || !is_attr(ids[n - 1]))
        throw DataError("query must name an attribute after 'is' and at the end");
    for (std::size_t k = 2; k + 1 < n; ++k)
        if (!is_rel(ids[k]))
            throw DataError("query position " + std::to_string(k) + " must be a relation word");
}

bool is_self_conflict(const std::vector<int>& ids) {
    if (ids.size() != 3) return false;
    const int a = ids[1], b = ids[2];
    return a != b && is_color(a) == is_color(b);
}

int evaluate_query(const Layout& layout, const std::vector<int>& ids) {
    validate_query(ids);
    const int a = ids[1];
    const int b = ids[static_cast<std::size_t>(ids.size() - 1)];
    if (ids.size() == 3) {
        for (const Cell& cell : layout.cells)
            if (cell_matches(cell, a) && cell_matches(cell, b)) return 1;
        return 0;
    }
    for (int r = 0; r < kGridSide; ++r) {
        for (int c = 0; c < kGridSide; ++c) {
            if (!cell_matches(layout.at(r, c), a)) continue;
            int rr = r, cc = c;
            bool ok = true;
            for (std::size_t k = 2; k + 1 < ids.size(); ++k) {
                const auto [dr, dc] = rel_step(ids[k]);
                rr += dr;
                cc += dc;
                if (rr < 0 || rr >= kGridSide || cc < 0 || cc >= kGridSide ||
                    !layout.at(rr, cc).occupied) {
                    ok = false;
                    break;
                }
            }
            if (ok && cell_matches(layout.at(rr, cc), b)) return 1;
        }
    }
    return 0;
}

Layout sample_layout(Rng& rng, double occupancy_prob) {
    if (!(occupancy_prob > 0.0) || occupancy_prob > 1.0)
        throw ConfigError("occupancy probability must lie in (0,1]");
    Layout layout;
    do {
        for (Cell& cell : layout.cells) {
            cell.occupied = rng.uniform() < occupancy_prob;
            if (cell.occupied) {
                cell.color = kRedTok + static_cast<int>(rng.below(3));
                cell.shape = kCircleTok + static_cast<int>(rng.below(3));
            } else {
                cell = Cell{};
            }
        }
    } while (layout.occupied_count() == 0);
    return layout;
}

Tensor render_image(const Layout& layout) {
    Tensor img = Tensor::zeros({3, kImageSide, kImageSide});
    // Upward triangle: 8 rows widening from a 2-pixel tip to an 8-pixel base.
    static constexpr int kTriSpan[8] = {2, 2, 4, 4, 6, 6, 8, 8};
    for (int r = 0; r < kGridSide; ++r) {
        for (int c = 0; c < kGridSide; ++c) {
            const Cell& cell = layout.at(r, c);
            if (!cell.occupied) continue;
            const int ch = cell.color - kRedTok;
            const int r0 = r * kCellPixels, c0 = c * kCellPixels;
            auto set = [&](int dr, int dc) {
                img[(ch * kImageSide + r0 + dr) * kImageSide + c0 + dc] = 1.0;
            };
            if (cell.shape == kSquareTok) {
                for (int dr = 1; dr <= 8; ++dr)
                    for (int dc = 1; dc <= 8; ++dc) set(dr, dc);
            } else if (cell.shape == kCircleTok) {
                for (int dr = 0; dr < kCellPixels; ++dr)
                    for (int dc = 0; dc < kCellPixels; ++dc) {
                        const double dy = dr - 4.5, dx = dc - 4.5;
                        if (dy * dy + dx * dx <= 16.0) set(dr, dc);
                    }
            } else {
                for (int k = 0; k < 8; ++k) {
                    const int s = kTriSpan[k];
                    for (int dc = 5 - s / 2; dc <= 4 + s / 2; ++dc) set(1 + k, dc);
                }
            }
        }
    }
    return img;
}

std::vector<std::vector<int>> all_queries(int length) {
    std::vector<std::vector<int>> out;
    std::vector<int> attrs, rels;
    for (int id = kRedTok; id <= kTriangleTok; ++id) attrs.push_back(id);
    for (int id = kAboveTok; id <= kRightOfTok; ++id) rels.push_back(id);
    switch (length) {
        case 3:
            for (int a : attrs)
                for (int b : attrs) out.push_back({kIsTok, a, b});
            break;
        case 4:
            for (int a : attrs)
                for (int r : rels)
                    for (int b : attrs) out.push_back({kIsTok, a, r, b});
            break;
        case 5:
            for (int a : attrs)
                for (int r1 : rels)
                    for (int r2 : rels)
                        for (int b : attrs) out.push_back({kIsTok, a, r1, r2, b});
            break;
        default:
            throw ConfigError("query length must be 3, 4, or 5");
    }
    return out;
}

void split_queries(std::uint64_t seed, int length, std::vector<std::vector<int>>* train_pool,
                   std::vector<std::vector<int>>* test_pool) {
    if (length != 4 && length != 5)
        throw ConfigError("only lengths 4 and 5 have held-out query splits");
    auto pool = all_queries(length);
    std::vector<std::pair<std::uint64_t, std::vector<int>>> keyed;
    keyed.reserve(pool.size());
    for (auto& q : pool) keyed.emplace_back(mix64(seed, fnv1a(detokenize(q))), std::move(q));
    std::sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first < y.first : x.second < y.second;
    });
    const std::size_t n_test = keyed.size() / 8;  // 12.5% held out
    if (train_pool) train_pool->clear();
    if (test_pool) test_pool->clear();
    for (std::size_t k = 0; k < keyed.size(); ++k) {
        auto* dst = k < n_test ? test_pool : train_pool;
        if (dst) dst->push_back(std::move(keyed[k].second));
    }
}

namespace {

constexpr std::uint64_t kTestSeedOffset = 1ULL << 32;
constexpr int kMaxRejections = 10000;

} // namespace

GenerateResult generate_split(const GenerateConfig& cfg) {
    if (cfg.size <= 0) throw ConfigError("dataset size must be positive");
    if (cfg.max_tokens < kQueryMaxTokens)
        throw ConfigError("max_tokens must be at least " + std::to_string(kQueryMaxTokens));
    if (!(cfg.occupancy > 0.0) || cfg.occupancy > 1.0)
        throw ConfigError("occupancy probability must lie in (0,1]");

    const int n3 = static_cast<int>(std::floor(0.125 * cfg.size + 0.5));
    const int n4 = static_cast<int>(std::floor(0.625 * cfg.size + 0.5));

    std::map<int, std::vector<std::vector<int>>> pools;
    pools[3] = all_queries(3);  // shared between splits
    for (int length : {4, 5}) {
        std::vector<std::vector<int>> train, test;
        split_queries(cfg.seed, length, &train, &test);
        pools[length] = cfg.test_split ? std::move(test) : std::move(train);
    }

    std::map<std::vector<int>, std::pair<int, int>> balance;  // query -> (yes, total)
    const std::uint64_t offset = cfg.test_split ? kTestSeedOffset : 0;

    GenerateResult result;
    result.samples.reserve(static_cast<std::size_t>(cfg.size));
    for (int idx = 0; idx < cfg.size; ++idx) {
        const int length = idx < n3 ? 3 : idx < n3 + n4 ? 4 : 5;
        Rng rng(seed_for(cfg.seed, offset + static_cast<std::uint64_t>(idx)));
        for (;;) {
            auto& pool = pools[length];
            if (pool.empty())
                throw DataError("every length-" + std::to_string(length) +
                                " query was dropped; cannot continue");
            const std::vector<int> query = pool[rng.below(pool.size())];
            const bool conflict = is_self_conflict(query);
            bool emitted = false;
            for (int attempt = 0; !emitted; ++attempt) {
                const Layout layout = sample_layout(rng, cfg.occupancy);
                const int answer = evaluate_query(layout, query);
                bool accept = true;
                if (cfg.balance && !conflict) {
                    // Keep each query string as close to 50/50 as integer
                    // counts allow: the new yes count may differ from half
                    // the new total by at most one half.
                    const auto [yes, total] = balance[query];
                    accept = std::abs(2 * (yes + answer) - (total + 1)) <= 1;
                }
                if (accept) {
                    if (cfg.balance && !conflict) {
                        balance[query].first += answer;
                        balance[query].second += 1;
                    }
                    if (!conflict) {
                        result.audit_yes += answer;
                        result.audit_total += 1;
                    }
                    ShapesSample sample;
                    sample.image = render_image(layout);
                    sample.tokens = query;
                    sample.tokens.resize(static_cast<std::size_t>(cfg.max_tokens), kPadTok);
                    sample.answer = answer;
                    sample.length = length;
                    sample.layout = layout;
                    result.samples.push_back(std::move(sample));
                    emitted = true;
                } else if (attempt + 1 == kMaxRejections) {
                    std::cerr << "warning: dropping query \"" << detokenize(query) << "\" after "
                              << kMaxRejections << " rejected layouts (balance unattainable)\n";
                    pool.erase(std::find(pool.begin(), pool.end(), query));
                    balance.erase(query);
                    ++result.dropped_queries;
                    break;
                }
            }
            if (emitted) break;
        }
    }
    return result;
}

namespace {

constexpr char kSvdsMagic[4] = {'S', 'V', 'D', 'S'};
constexpr std::uint32_t kSvdsVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f32(std::ostream& os, float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    os.write(b, 4);
}

std::uint8_t get_u8(std::istream& is, const std::string& path) {
    char b;
    if (!is.read(&b, 1)) throw DataError("split file truncated: " + path);
    return static_cast<std::uint8_t>(b);
}

std::uint16_t get_u16(std::istream& is, const std::string& path) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw DataError("split file truncated: " + path);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("split file truncated: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is, const std::string& path) {
    return std::bit_cast<float>(get_u32(is, path));
}

} // namespace

void write_svds(const std::string& path, const std::vector<ShapesSample>& samples,
                int max_tokens) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open split file for writing: " + path);
    os.write(kSvdsMagic, 4);
    put_u32(os, kSvdsVersion);
    put_u32(os, static_cast<std::uint32_t>(samples.size()));
    put_u16(os, static_cast<std::uint16_t>(max_tokens));
    for (const ShapesSample& sample : samples) {
        if (sample.image.size() != 3 * kImageSide * kImageSide)
            throw ShapeError("sample image must have 2700 values, got " +
                             std::to_string(sample.image.size()));
        if (static_cast<int>(sample.tokens.size()) != max_tokens)
            throw ShapeError("sample tokens must be padded to " + std::to_string(max_tokens));
        for (Index i = 0; i < sample.image.size(); ++i)
            put_f32(os, static_cast<float>(sample.image[i]));
        for (int id : sample.tokens) put_u16(os, static_cast<std::uint16_t>(id));
        os.put(static_cast<char>(sample.answer));
        os.put(static_cast<char>(sample.length));
    }
    if (!os) throw DataError("write failed for split file: " + path);
}

std::vector<ShapesSample> read_svds(const std::string& path, int* max_tokens) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open split file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kSvdsMagic))
        throw DataError("not a split file (bad magic): " + path);
    if (const auto version = get_u32(is, path); version != kSvdsVersion)
        throw DataError("unsupported split file version " + std::to_string(version) + ": " +
                        path);
    const std::uint32_t count = get_u32(is, path);
    const int toks = get_u16(is, path);
    if (max_tokens) *max_tokens = toks;
    std::vector<ShapesSample> samples(count);
    for (ShapesSample& sample : samples) {
        sample.image = Tensor({3, kImageSide, kImageSide});
        for (Index i = 0; i < sample.image.size(); ++i)
            sample.image[i] = static_cast<double>(get_f32(is, path));
        sample.tokens.resize(static_cast<std::size_t>(toks));
        for (int& id : sample.tokens) id = get_u16(is, path);
        sample.answer = get_u8(is, path);
        sample.length = get_u8(is, path);
    }
    return samples;
}

} // namespace sva
