#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sva/rng.hpp"
#include "sva/tensor.hpp"

namespace sva {

/// Token ids. 0 is the reserved pad token; attribute words are 2..7 and
/// relation words 8..11.
enum Token : int {
    kPadTok = 0,
    kIsTok = 1,
    kRedTok = 2,
    kGreenTok = 3,
    kBlueTok = 4,
    kCircleTok = 5,
    kSquareTok = 6,
    kTriangleTok = 7,
    kAboveTok = 8,
    kBelowTok = 9,
    kLeftOfTok = 10,
    kRightOfTok = 11,
};

inline constexpr int kVocabSize = 12;
inline constexpr int kQueryMaxTokens = 5;
inline constexpr int kGridSide = 3;
inline constexpr int kCellPixels = 10;
inline constexpr int kImageSide = kGridSide * kCellPixels;

const std::vector<std::string>& vocabulary();  // word at index = token id

struct Cell {
    bool occupied = false;
    int color = 0;  // kRedTok..kBlueTok when occupied
    int shape = 0;  // kCircleTok..kTriangleTok when occupied
};

/// 3x3 grid of cells, row 0 at the top of the rendered image.
struct Layout {
    std::array<Cell, kGridSide * kGridSide> cells{};

    Cell& at(int r, int c) { return cells[static_cast<std::size_t>(r * kGridSide + c)]; }
    const Cell& at(int r, int c) const {
        return cells[static_cast<std::size_t>(r * kGridSide + c)];
    }
    int occupied_count() const;
};

std::vector<int> tokenize(const std::string& text);   // DataError on unknown word
std::string detokenize(const std::vector<int>& ids);  // stops at the first pad

/// Grammar check: "is ATTR REL{0..2} ATTR". Throws DataError when violated.
void validate_query(const std::vector<int>& ids);

/// Length-3 query whose two attributes are distinct words of the same class
/// (two colors or two shapes); no object can satisfy both, so the answer is
/// always no.
bool is_self_conflict(const std::vector<int>& ids);

/// Ground-truth answer, 0 = no / 1 = yes. Relations locate the first
/// attribute's object relative to the last one: "is A below B" asks for an
/// A-object in the cell directly under a B-object, and each extra relation
/// extends the chain through an occupied (otherwise unconstrained) cell.
int evaluate_query(const Layout& layout, const std::vector<int>& ids);

/// Each cell independently occupied with the given probability (uniform color
/// and shape); all-empty layouts are resampled.
Layout sample_layout(Rng& rng, double occupancy_prob);

/// Rasterize to a (3,30,30) image in [0,1]: channel 0/1/2 = red/green/blue,
/// shapes drawn into their 10x10 cell (square 8x8 block, circle of radius 4,
/// upward triangle of base 8).
Tensor render_image(const Layout& layout);

struct ShapesSample {
    Tensor image;             // (3,30,30)
    std::vector<int> tokens;  // padded to max_tokens
    int answer = 0;           // 0 = no, 1 = yes
    int length = 0;           // query length before padding
    Layout layout;            // ground truth (not serialized)
};

struct GenerateConfig {
    std::uint64_t seed = 0;
    int size = 0;
    bool test_split = false;  // selects the held-out query pool + seed offset
    double occupancy = 0.5;
    bool balance = true;
    int max_tokens = kQueryMaxTokens;
};

struct GenerateResult {
    std::vector<ShapesSample> samples;
    int dropped_queries = 0;
    std::int64_t audit_yes = 0;    // over non-self-conflict samples
    std::int64_t audit_total = 0;
    double yes_fraction() const {
        return audit_total == 0 ? 0.0 : static_cast<double>(audit_yes) / audit_total;
    }
};

/// All grammar strings of one length in deterministic token order.
std::vector<std::vector<int>> all_queries(int length);

/// Partition the length-4/5 pools into train and held-out-test query strings
/// (12.5% test) by a seed-keyed hash; length 3 is shared between splits.
void split_queries(std::uint64_t seed, int length, std::vector<std::vector<int>>* train_pool,
                   std::vector<std::vector<int>>* test_pool);

/// Deterministic dataset assembly: per-index seeding, 12.5/62.5/25 length
/// mix, optional per-query-string yes/no balancing by rejection sampling.
/// Queries whose balance is unattainable after 1e4 rejections are dropped
/// with a warning on stderr.
GenerateResult generate_split(const GenerateConfig& cfg);

/// Split file round trip ("SVDS" format). Layouts are not serialized; read
/// samples carry an all-empty layout.
void write_svds(const std::string& path, const std::vector<ShapesSample>& samples,
                int max_tokens);
std::vector<ShapesSample> read_svds(const std::string& path, int* max_tokens = nullptr);

} // namespace sva
