#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvdb/debugger.hpp"
#include "mvdb/primitives.hpp"

namespace mvdb {

struct NodeId {
  std::uint64_t value = 0;

  friend bool operator==(NodeId, NodeId) = default;
  friend auto operator<=>(NodeId, NodeId) = default;
};

struct NodeIdHash {
  std::size_t operator()(NodeId id) const { return std::hash<std::uint64_t>{}(id.value); }
};

struct EdgeLabel {
  enum class Kind : std::uint8_t { Plain, Input, Output };
  Kind kind = Kind::Plain;
  Value value = 0;   // input value, or output return value
  std::string prim;  // output primitive name

  static EdgeLabel plain() { return {}; }
  static EdgeLabel input(Value v) { return {Kind::Input, v, {}}; }
  static EdgeLabel output(std::string prim, Value ret) { return {Kind::Output, ret, std::move(prim)}; }

  friend bool operator==(const EdgeLabel&, const EdgeLabel&) = default;
};

/// The primitive call a node is stopped at, recorded when the node is created.
struct CallSite {
  std::uint32_t call = 0;
  std::vector<Value> args;
  PrimKind kind = PrimKind::In;

  friend bool operator==(const CallSite&, const CallSite&) = default;
};

struct TreeNode {
  NodeId id;
  std::uint64_t depth = 0;
  std::optional<NodeId> parent;
  EdgeLabel edge;
  std::uint64_t digest = 0;
  std::optional<std::string> label;  // primitive name when the next instruction is a primitive call
  std::optional<CallSite> site;
  std::vector<NodeId> children;
};

class UnknownNode : public std::out_of_range {
 public:
  explicit UnknownNode(NodeId id) : std::out_of_range("unknown node " + std::to_string(id.value)) {}
};

/// Rooted tree of visited program states. Nodes are never merged: every
/// distinct path from the root ends in its own node.
class MultiverseTree {
 public:
  explicit MultiverseTree(std::uint64_t root_digest, std::optional<std::string> root_label = {},
                          std::optional<CallSite> root_site = {}) {
    TreeNode root;
    root.id = NodeId{next_id_++};
    root.digest = root_digest;
    root.label = std::move(root_label);
    root.site = std::move(root_site);
    root_ = cursor_ = root.id;
    nodes_.emplace(root.id, std::move(root));
  }

  NodeId root() const { return root_; }
  NodeId cursor() const { return cursor_; }
  std::size_t size() const { return nodes_.size(); }
  bool contains(NodeId id) const { return nodes_.contains(id); }

  const TreeNode& node(NodeId id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw UnknownNode(id);
    return it->second;
  }
  const TreeNode& current() const { return node(cursor_); }

  std::optional<NodeId> child(NodeId parent, const EdgeLabel& edge) const {
    for (NodeId c : node(parent).children) {
      if (node(c).edge == edge) return c;
    }
    return std::nullopt;
  }

  /// Creates a child of `parent` without moving the cursor.
  NodeId add_child(NodeId parent, EdgeLabel edge, std::uint64_t digest,
                   std::optional<std::string> label = {}, std::optional<CallSite> site = {}) {
    TreeNode& p = mutable_node(parent);
    TreeNode n;
    n.id = NodeId{next_id_++};
    n.depth = p.depth + 1;
    n.parent = parent;
    n.edge = std::move(edge);
    n.digest = digest;
    n.label = std::move(label);
    n.site = std::move(site);
    p.children.push_back(n.id);
    const NodeId id = n.id;
    nodes_.emplace(id, std::move(n));
    return id;
  }

  struct Recorded {
    NodeId node;
    bool created = false;
  };

  /// Follows (or creates) the child of the cursor labelled `edge`. A
  /// re-traversed node must carry the same digest.
  Recorded record_transition(const EdgeLabel& edge, std::uint64_t digest,
                             std::optional<std::string> label = {},
                             std::optional<CallSite> site = {}) {
    if (auto existing = child(cursor_, edge)) {
      if (node(*existing).digest != digest)
        throw IntegrityError("re-traversal of node " + std::to_string(existing->value) +
                             " produced a different state");
      cursor_ = *existing;
      return {cursor_, false};
    }
    cursor_ = add_child(cursor_, edge, digest, std::move(label), std::move(site));
    return {cursor_, true};
  }

  /// Moves the cursor to its parent after a step back.
  void retreat(std::uint64_t digest) {
    const TreeNode& cur = current();
    if (!cur.parent) throw IntegrityError("step back at the root");
    if (node(*cur.parent).digest != digest)
      throw IntegrityError("step back reached a state different from the parent node");
    cursor_ = *cur.parent;
  }

  void move_cursor(NodeId id) {
    node(id);
    cursor_ = id;
  }

  /// Lowest common ancestor.
  NodeId find_join(NodeId a, NodeId b) const {
    const TreeNode* x = &node(a);
    const TreeNode* y = &node(b);
    while (x->depth > y->depth) x = &node(*x->parent);
    while (y->depth > x->depth) y = &node(*y->parent);
    while (x->id != y->id) {
      x = &node(*x->parent);
      y = &node(*y->parent);
    }
    return x->id;
  }

  /// Nodes strictly below `ancestor` down to `target`, in root-to-leaf order.
  std::vector<NodeId> path_from(NodeId ancestor, NodeId target) const {
    std::vector<NodeId> path;
    NodeId at = target;
    while (at != ancestor) {
      path.push_back(at);
      const auto& p = node(at).parent;
      if (!p) throw std::invalid_argument("node is not a descendant");
      at = *p;
    }
    return {path.rbegin(), path.rend()};
  }

  /// All nodes in creation order.
  std::vector<NodeId> ids() const {
    std::vector<NodeId> out;
    out.reserve(nodes_.size());
    for (const auto& [id, n] : nodes_) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  TreeNode& mutable_node(NodeId id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw UnknownNode(id);
    return it->second;
  }

  std::unordered_map<NodeId, TreeNode, NodeIdHash> nodes_;
  NodeId root_;
  NodeId cursor_;
  std::uint64_t next_id_ = 0;
};

}  // namespace mvdb
