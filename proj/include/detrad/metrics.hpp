#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "detrad/error.hpp"

namespace detrad {

struct LabeledScore {
    double score = 0.0;
    bool is_anomaly = false;
};

using LabeledScores = std::vector<LabeledScore>;

// Mann-Whitney form: P(score_anom > score_norm) + 1/2 P(equal) over all
// cross-class pairs. Computed by one sort and a tie-group walk.
inline double roc_auc(const LabeledScores& s) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& x : s) (x.is_anomaly ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw InputError("roc_auc: need both classes, got " + std::to_string(n_pos) +
                         " anomalies / " + std::to_string(n_neg) + " normals");
    LabeledScores sorted = s;
    std::sort(sorted.begin(), sorted.end(),
              [](const LabeledScore& a, const LabeledScore& b) { return a.score < b.score; });
    double wins = 0.0;
    std::size_t neg_below = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        std::size_t pos_tie = 0, neg_tie = 0;
        while (j < sorted.size() && sorted[j].score == sorted[i].score) {
            (sorted[j].is_anomaly ? pos_tie : neg_tie)++;
            ++j;
        }
        wins += double(pos_tie) * (double(neg_below) + 0.5 * double(neg_tie));
        neg_below += neg_tie;
        i = j;
    }
    return wins / (double(n_pos) * double(n_neg));
}

// Average precision: mean over positives, ranked by descending score, of the
// precision at that rank. Ties keep their original input order (stable sort).
inline double pr_auc(const LabeledScores& s) {
    std::size_t n_pos = 0;
    for (const auto& x : s) n_pos += x.is_anomaly;
    if (n_pos == 0) throw InputError("pr_auc: no positives");
    std::vector<std::size_t> order(s.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&s](std::size_t a, std::size_t b) {
        return s[a].score > s[b].score;
    });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 1; rank <= order.size(); ++rank) {
        if (s[order[rank - 1]].is_anomaly) {
            ++hits;
            ap += double(hits) / double(rank);
        }
    }
    return ap / double(n_pos);
}

}  // namespace detrad
