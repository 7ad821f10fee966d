#pragma once

#include "policyscope/commands.hpp"
#include "policyscope/corpus.hpp"
#include "policyscope/error.hpp"
#include "policyscope/eval.hpp"
#include "policyscope/models.hpp"
#include "policyscope/overlap.hpp"
#include "policyscope/pipeline.hpp"
#include "policyscope/predictions.hpp"
#include "policyscope/scoring.hpp"
#include "policyscope/textproc.hpp"
