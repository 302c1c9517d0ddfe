#pragma once

#include <deque>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gaitkit/tensor.hpp"

namespace gaitkit {

// Keypoint schema: joints, bone edges, pose center, a parent tree rooted at
// the center, and the left/right pairing used for mirror augmentation.
struct SkeletonSpec {
    std::string name;
    size_t n_joints = 0;
    std::vector<std::pair<size_t, size_t>> edges;  // undirected, no self-loops
    size_t center = 0;
    std::vector<size_t> parent_of;  // parent_of[center] == center
    std::vector<size_t> lr_swap;    // involution; axial joints map to themselves

    // hop distance from every joint to the center, BFS over the edge graph;
    // computed once and cached
    std::vector<size_t> hops_to_center;

    void validate() const {
        if (n_joints == 0) throw DataError("skeleton '" + name + "': no joints");
        std::vector<std::vector<size_t>> adj(n_joints);
        for (auto [i, j] : edges) {
            if (i >= n_joints || j >= n_joints)
                throw DataError("skeleton '" + name + "': edge index out of range");
            if (i == j) throw DataError("skeleton '" + name + "': self-loop in edge list");
            adj[i].push_back(j);
            adj[j].push_back(i);
        }
        // connectivity
        std::vector<bool> seen(n_joints, false);
        std::deque<size_t> q{center};
        seen[center] = true;
        size_t reached = 1;
        while (!q.empty()) {
            size_t u = q.front();
            q.pop_front();
            for (size_t v : adj[u])
                if (!seen[v]) {
                    seen[v] = true;
                    ++reached;
                    q.push_back(v);
                }
        }
        if (reached != n_joints)
            throw DataError("skeleton '" + name + "': edge graph is disconnected");
        // parent tree reaches center without cycles
        if (parent_of.size() != n_joints || parent_of[center] != center)
            throw DataError("skeleton '" + name + "': bad parent map");
        for (size_t j = 0; j < n_joints; ++j) {
            size_t cur = j, steps = 0;
            while (cur != center) {
                cur = parent_of[cur];
                if (++steps > n_joints)
                    throw DataError("skeleton '" + name + "': parent map has a cycle");
            }
        }
        // lr swap is an involution
        if (lr_swap.size() != n_joints)
            throw DataError("skeleton '" + name + "': bad lr_swap size");
        for (size_t j = 0; j < n_joints; ++j) {
            if (lr_swap[j] >= n_joints || lr_swap[lr_swap[j]] != j)
                throw DataError("skeleton '" + name + "': lr_swap is not an involution");
        }
        if (lr_swap[center] != center)
            throw DataError("skeleton '" + name + "': center must map to itself in lr_swap");
    }

    void compute_hops() {
        hops_to_center.assign(n_joints, size_t(-1));
        std::vector<std::vector<size_t>> adj(n_joints);
        for (auto [i, j] : edges) {
            adj[i].push_back(j);
            adj[j].push_back(i);
        }
        std::deque<size_t> q{center};
        hops_to_center[center] = 0;
        while (!q.empty()) {
            size_t u = q.front();
            q.pop_front();
            for (size_t v : adj[u])
                if (hops_to_center[v] == size_t(-1)) {
                    hops_to_center[v] = hops_to_center[u] + 1;
                    q.push_back(v);
                }
        }
    }

    void finalize() {
        validate();
        compute_hops();
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["name"] = name;
        j["n_joints"] = n_joints;
        auto& je = j["edges"] = nlohmann::json::array();
        for (auto [a, b] : edges) je.push_back({a, b});
        j["center"] = center;
        j["parents"] = parent_of;
        j["lr_swap"] = lr_swap;
        return j;
    }

    static SkeletonSpec from_json(const nlohmann::json& j) {
        SkeletonSpec s;
        s.name = j.at("name").get<std::string>();
        s.n_joints = j.at("n_joints").get<size_t>();
        for (const auto& e : j.at("edges"))
            s.edges.emplace_back(e.at(0).get<size_t>(), e.at(1).get<size_t>());
        s.center = j.at("center").get<size_t>();
        s.parent_of = j.at("parents").get<std::vector<size_t>>();
        s.lr_swap = j.at("lr_swap").get<std::vector<size_t>>();
        s.finalize();
        return s;
    }

    static SkeletonSpec from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open skeleton schema file: " + path);
        nlohmann::json j;
        in >> j;
        return from_json(j);
    }
};

// COCO 17-keypoint schema. Joint order: nose, l/r eye, l/r ear, l/r shoulder,
// l/r elbow, l/r wrist, l/r hip, l/r knee, l/r ankle. Center is the nose.
inline SkeletonSpec coco17() {
    SkeletonSpec s;
    s.name = "coco17";
    s.n_joints = 17;
    s.edges = {
        {0, 1},  {0, 2},            // nose - eyes
        {1, 3},  {2, 4},            // eyes - ears
        {0, 5},  {0, 6},            // nose - shoulders
        {5, 7},  {6, 8},            // shoulders - elbows
        {7, 9},  {8, 10},           // elbows - wrists
        {5, 6},                     // shoulder - shoulder
        {5, 11}, {6, 12},           // shoulders - hips
        {11, 12},                   // hip - hip
        {11, 13}, {12, 14},         // hips - knees
        {13, 15}, {14, 16},         // knees - ankles
    };
    s.center = 0;
    s.parent_of = {0, 0, 0, 1, 2, 0, 0, 5, 6, 7, 8, 5, 6, 11, 12, 13, 14};
    s.lr_swap = {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15};
    s.finalize();
    return s;
}

// OUMVLP 18-keypoint schema: the COCO joints plus an explicit neck (index 17).
// Center is the neck; shoulders and hips hang off it.
inline SkeletonSpec oumvlp18() {
    SkeletonSpec s;
    s.name = "oumvlp18";
    s.n_joints = 18;
    s.edges = {
        {0, 1},  {0, 2},            // nose - eyes
        {1, 3},  {2, 4},            // eyes - ears
        {0, 17},                    // nose - neck
        {17, 5}, {17, 6},           // neck - shoulders
        {5, 7},  {6, 8},            // shoulders - elbows
        {7, 9},  {8, 10},           // elbows - wrists
        {17, 11}, {17, 12},         // neck - hips
        {11, 12},                   // hip - hip
        {11, 13}, {12, 14},         // hips - knees
        {13, 15}, {14, 16},         // knees - ankles
    };
    s.center = 17;
    s.parent_of = {17, 0, 0, 1, 2, 17, 17, 5, 6, 7, 8, 17, 17, 11, 12, 13, 14, 17};
    s.lr_swap = {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 17};
    s.finalize();
    return s;
}

inline SkeletonSpec builtin_skeleton(const std::string& name) {
    if (name == "coco17") return coco17();
    if (name == "oumvlp18") return oumvlp18();
    throw ConfigError("unknown skeleton schema: " + name +
                      " (built-ins: coco17, oumvlp18)");
}

// Built-in name or a path to a schema JSON document.
inline SkeletonSpec resolve_skeleton(const std::string& name_or_path) {
    if (name_or_path.size() > 5 &&
        name_or_path.substr(name_or_path.size() - 5) == ".json")
        return SkeletonSpec::from_file(name_or_path);
    return builtin_skeleton(name_or_path);
}

}  // namespace gaitkit
