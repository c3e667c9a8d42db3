#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/numkit.hpp"
#include "wimle/random.hpp"

namespace wimle::buffers {

/// One replay record. Real transitions carry w = 1; synthetic ones carry
/// the confidence weight computed when they were generated.
struct WeightedTransition {
    Vector s;
    Vector a;
    Real r = 0;
    Vector s_next;
    bool done = false;
    Real w = 1;
};

/// Column-stacked view of a set of transitions.
struct Batch {
    Matrix states;
    Matrix actions;
    Vector rewards;
    Matrix next_states;
    Vector done;
    Vector weights;

    Index size() const noexcept { return states.rows(); }
};

inline Batch stack(std::span<const WeightedTransition* const> items)
{
    Batch b;
    if (items.empty()) return b;
    const Index n = static_cast<Index>(items.size());
    const Index sd = items.front()->s.size();
    const Index ad = items.front()->a.size();
    b.states.resize(n, sd);
    b.actions.resize(n, ad);
    b.rewards.resize(n);
    b.next_states.resize(n, sd);
    b.done.resize(n);
    b.weights.resize(n);
    for (Index i = 0; i < n; ++i) {
        const auto& t = *items[static_cast<std::size_t>(i)];
        b.states.row(i) = t.s.transpose();
        b.actions.row(i) = t.a.transpose();
        b.rewards(i) = t.r;
        b.next_states.row(i) = t.s_next.transpose();
        b.done(i) = t.done ? Real(1) : Real(0);
        b.weights(i) = t.w;
    }
    return b;
}

inline Batch stack(const std::vector<WeightedTransition>& items)
{
    std::vector<const WeightedTransition*> ptrs;
    ptrs.reserve(items.size());
    for (const auto& t : items) ptrs.push_back(&t);
    return stack(ptrs);
}

/// Bounded FIFO ring of transitions.
class ReplayStore {
public:
    explicit ReplayStore(std::size_t capacity) : capacity_(capacity)
    {
        detail::require(capacity >= 1, "ReplayStore: capacity must be positive");
    }

    void add(WeightedTransition t)
    {
        detail::require(t.w > 0 && t.w <= 1, "ReplayStore::add: weight must lie in (0, 1]");
        if (!items_.empty()) {
            const auto& ref = items_.front();
            detail::require_dims(t.s.size() == ref.s.size() && t.a.size() == ref.a.size() &&
                                     t.s_next.size() == ref.s_next.size(),
                                 "ReplayStore::add: transition dimensions differ from stored ones");
        }
        if (items_.size() < capacity_) {
            items_.push_back(std::move(t));
        } else {
            items_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
        ++inserted_;
    }

    void clear() noexcept
    {
        items_.clear();
        head_ = 0;
    }

    std::size_t size() const noexcept { return items_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool empty() const noexcept { return items_.empty(); }
    /// Total insertions since construction (not reset by clear()).
    std::size_t inserted() const noexcept { return inserted_; }

    /// Logical index: 0 is the oldest live transition.
    const WeightedTransition& operator[](std::size_t i) const
    {
        return items_.at((head_ + i) % items_.size());
    }

    std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const
    {
        if (empty()) throw ContractError("ReplayStore: cannot sample from an empty store");
        std::uniform_int_distribution<std::size_t> pick(0, size() - 1);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = pick(rng);
        return idx;
    }

    Batch gather(std::span<const std::size_t> idx) const
    {
        std::vector<const WeightedTransition*> ptrs;
        ptrs.reserve(idx.size());
        for (auto i : idx) ptrs.push_back(&(*this)[i]);
        return stack(ptrs);
    }

    Batch sample(std::size_t n, Rng& rng) const
    {
        const auto idx = sample_indices(n, rng);
        return gather(idx);
    }

private:
    std::size_t capacity_;
    std::vector<WeightedTransition> items_;
    std::size_t head_ = 0;
    std::size_t inserted_ = 0;
};

}  // namespace wimle::buffers
