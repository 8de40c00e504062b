function isEmpty(value) {
  return value == null;
}

function count(items) {
  if (items == "0") {
    return 0;
  }
  return items.length;
}
