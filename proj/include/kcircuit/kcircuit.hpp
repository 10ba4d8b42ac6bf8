#pragma once

#include "common.hpp"
#include "config.hpp"
#include "data.hpp"
#include "discovery.hpp"
#include "eval.hpp"
#include "graph.hpp"
#include "io.hpp"
#include "lens.hpp"
#include "model.hpp"
#include "ops.hpp"
#include "safetensors.hpp"
#include "tokenizer.hpp"
#include "weights.hpp"
