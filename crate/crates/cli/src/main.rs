fn main() {
    println!("mvlab");
}
