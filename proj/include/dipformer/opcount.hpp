#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dip {

// Analytic multiply-accumulate counter. Ops credit the innermost active
// region; gauges record scalar facts (pooled token counts) by name. Maps are
// string-keyed and ordered so reports are deterministic for a given run.
class OpCounter {
  public:
    static OpCounter& instance() {
        static thread_local OpCounter c;
        return c;
    }

    void reset() {
        macs_.clear();
        gauges_.clear();
        stack_.clear();
        total_ = 0;
        enabled_ = true;
    }

    void set_enabled(bool on) { enabled_ = on; }
    bool enabled() const { return enabled_; }

    void add_macs(uint64_t n) {
        if (!enabled_) return;
        total_ += n;
        macs_[current_label()] += n;
    }

    // Gauges overwrite: re-running a region re-measures the same fact.
    void set_gauge(const std::string& name, uint64_t value) {
        if (!enabled_) return;
        gauges_[scoped_name(name)] = value;
    }

    uint64_t total() const { return total_; }

    uint64_t macs(const std::string& label) const {
        auto it = macs_.find(label);
        return it == macs_.end() ? 0 : it->second;
    }

    // Sum over every label with the given prefix; regions nest by '/'.
    uint64_t macs_under(const std::string& prefix) const {
        uint64_t n = 0;
        for (const auto& [label, v] : macs_)
            if (label.compare(0, prefix.size(), prefix) == 0) n += v;
        return n;
    }

    uint64_t gauge(const std::string& name) const {
        auto it = gauges_.find(name);
        return it == gauges_.end() ? 0 : it->second;
    }

    bool has_gauge(const std::string& name) const {
        return gauges_.count(name) != 0;
    }

    const std::map<std::string, uint64_t>& all_macs() const { return macs_; }
    const std::map<std::string, uint64_t>& all_gauges() const { return gauges_; }

    void push(const std::string& label) {
        stack_.push_back(stack_.empty() ? label : stack_.back() + "/" + label);
    }
    void pop() {
        if (!stack_.empty()) stack_.pop_back();
    }

    std::string current_label() const {
        return stack_.empty() ? std::string("unlabeled") : stack_.back();
    }

  private:
    std::string scoped_name(const std::string& name) const {
        return stack_.empty() ? name : stack_.back() + "/" + name;
    }

    std::map<std::string, uint64_t> macs_;
    std::map<std::string, uint64_t> gauges_;
    std::vector<std::string> stack_;
    uint64_t total_ = 0;
    bool enabled_ = true;
};

// RAII region label. Nested scopes produce slash-joined labels, so
// "model/stage1/lca_scores" can be summed by prefix.
class OpScope {
  public:
    explicit OpScope(const std::string& label) { OpCounter::instance().push(label); }
    ~OpScope() { OpCounter::instance().pop(); }
    OpScope(const OpScope&) = delete;
    OpScope& operator=(const OpScope&) = delete;
};

}  // namespace dip
